#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace padst {

using BigInt = boost::multiprecision::cpp_int;

// log10 of a positive BigInt, accurate to double precision.
inline double log10_of(const BigInt& v) {
  if (v <= 0) throw std::domain_error("log10_of: argument must be positive");
  const std::string s = v.str();
  const std::size_t take = s.size() < 17 ? s.size() : 17;
  const double head = std::stod(s.substr(0, take));
  return std::log10(head) + static_cast<double>(s.size() - take);
}

}  // namespace padst
