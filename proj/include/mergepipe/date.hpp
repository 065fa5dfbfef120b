#pragma once

#include <chrono>
#include <compare>
#include <cstdio>
#include <string>
#include <string_view>

#include "mergepipe/error.hpp"

namespace mergepipe {

/// Calendar date stored as days since 1970-01-01.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(int days_since_epoch) : days_(days_since_epoch) {}

  static Date from_ymd(int year, unsigned month, unsigned day) {
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                          std::chrono::day{day}};
    require(ymd.ok(), ErrorKind::MalformedRow, "invalid calendar date");
    return Date(std::chrono::sys_days{ymd}.time_since_epoch().count());
  }

  /// Parses YYYY-MM-DD.
  static Date parse(std::string_view text) {
    auto bad = [&] { return Error(ErrorKind::MalformedRow, "bad ISO date '" + std::string(text) + "'"); };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
    int parts[3] = {0, 0, 0};
    const std::size_t starts[3] = {0, 5, 8};
    const std::size_t lens[3] = {4, 2, 2};
    for (int p = 0; p < 3; ++p) {
      for (std::size_t i = 0; i < lens[p]; ++i) {
        const char c = text[starts[p] + i];
        if (c < '0' || c > '9') throw bad();
        parts[p] = parts[p] * 10 + (c - '0');
      }
    }
    const std::chrono::year_month_day ymd{std::chrono::year{parts[0]},
                                          std::chrono::month{static_cast<unsigned>(parts[1])},
                                          std::chrono::day{static_cast<unsigned>(parts[2])}};
    if (!ymd.ok()) throw bad();
    return Date(std::chrono::sys_days{ymd}.time_since_epoch().count());
  }

  std::string iso() const {
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days_}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
  }

  constexpr int days() const { return days_; }
  constexpr auto operator<=>(const Date&) const = default;

 private:
  int days_ = 0;
};

}  // namespace mergepipe
