#pragma once

// Parsers for the list-valued command-line flags.
//
//   "10"              -> {10}
//   "5,7,9"           -> {5, 7, 9}
//   "5,7,...,19"      -> {5, 7, 9, ..., 19}   (step taken from the first two)
//   "0.1:1.0:0.1"     -> {0.1, 0.2, ..., 1.0} (start:stop:step, stop inclusive)

#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include "calibkit/core.hpp"

namespace calibkit::args {

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double to_real(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw InvalidArgument("not a number: '" + s + "'");
  return v;
}

}  // namespace detail

inline std::vector<double> parse_reals(const std::string& text) {
  if (text.find(':') != std::string::npos) {
    const auto parts = detail::split(text, ':');
    if (parts.size() != 3) throw InvalidArgument("range must be start:stop:step, got '" + text + "'");
    const double start = detail::to_real(parts[0]), stop = detail::to_real(parts[1]), step = detail::to_real(parts[2]);
    if (!(step > 0.0) || stop < start) throw InvalidArgument("bad range '" + text + "'");
    std::vector<double> out;
    const auto count = static_cast<long>(std::floor((stop - start) / step + 1e-9));
    for (long i = 0; i <= count; ++i) {
      // Round to 12 decimals so 0.1:1.0:0.1 yields exactly 0.3, not 0.30000000000000004.
      const double v = start + static_cast<double>(i) * step;
      out.push_back(std::round(v * 1e12) / 1e12);
    }
    return out;
  }
  const auto parts = detail::split(text, ',');
  std::vector<double> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] == "...") {
      if (i < 2 || i + 1 != parts.size() - 1)
        throw InvalidArgument("'...' needs two leading values and one final value in '" + text + "'");
      const double step = out[1] - out[0];
      const double last = detail::to_real(parts[i + 1]);
      if (!(step > 0.0) || last < out.back()) throw InvalidArgument("bad progression '" + text + "'");
      for (double v = out.back() + step; v < last + step * 1e-9; v += step) out.push_back(std::round(v * 1e12) / 1e12);
      if (std::abs(out.back() - last) > step * 1e-9) throw InvalidArgument("progression does not reach " + parts[i + 1]);
      return out;
    }
    out.push_back(detail::to_real(parts[i]));
  }
  return out;
}

inline std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> out;
  for (double v : parse_reals(text)) {
    if (v < 1.0 || v != std::floor(v)) throw InvalidArgument("expected positive integers in '" + text + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline std::vector<std::string> parse_names(const std::string& text) {
  std::vector<std::string> out;
  for (auto& s : detail::split(text, ','))
    if (!s.empty()) out.push_back(s);
  if (out.empty()) throw InvalidArgument("empty list");
  return out;
}

}  // namespace calibkit::args
