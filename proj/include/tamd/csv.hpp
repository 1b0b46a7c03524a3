#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tamd/errors.hpp"

namespace tamd {

/// A file written under a temporary name and renamed into place by commit(),
/// so readers never see a partial CSV. Uncommitted files are removed.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path target) : target_(std::move(target)) {
    tmp_ = target_;
    tmp_ += ".partial";
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw ConfigError("cannot write output file '" + target_.string() + "'");
    out_ << std::setprecision(17);
  }
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }

  std::ostream& stream() { return out_; }
  const std::filesystem::path& path() const { return target_; }

  void commit() {
    out_.close();
    if (!out_) throw ConfigError("failed writing output file '" + target_.string() + "'");
    std::error_code ec;
    std::filesystem::rename(tmp_, target_, ec);
    if (ec) throw ConfigError("cannot move output into place at '" + target_.string() + "': " + ec.message());
    committed_ = true;
  }

 private:
  std::filesystem::path target_, tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

/// Writes one CSV row; doubles at 17 significant digits, NaN as "nan".
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  void header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) os_ << (i ? "," : "") << cols[i];
    os_ << '\n';
  }

  template <class... T>
  void row(const T&... fields) {
    bool first = true;
    ((put(fields, first), first = false), ...);
    os_ << '\n';
  }

  void row(std::span<const double> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) os_ << ',';
      put_number(values[i]);
    }
    os_ << '\n';
  }
  void row(const std::vector<double>& values) { row(std::span<const double>(values)); }

 private:
  void put_number(double v) {
    if (std::isnan(v))
      os_ << "nan";
    else
      os_ << v;
  }
  template <class T>
  void put(const T& v, bool first) {
    if (!first) os_ << ',';
    if constexpr (std::is_floating_point_v<T>)
      put_number(v);
    else
      os_ << v;
  }

  std::ostream& os_;
};

}  // namespace tamd
