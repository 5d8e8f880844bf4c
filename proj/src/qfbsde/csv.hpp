#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <string>

#include "qfbsde/errors.hpp"

namespace qfbsde::csv {

// Deterministic CSV writer: shortest round-trip decimal via to_chars, '.'
// decimal separator regardless of locale, '\n' line endings.
class Writer {
public:
  explicit Writer(const std::string& path) : f_(std::fopen(path.c_str(), "wb")) {
    if (!f_) throw config_error("cannot open output file " + path);
  }
  ~Writer() {
    if (f_) std::fclose(f_);
  }
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void line(const std::string& s) {
    std::fwrite(s.data(), 1, s.size(), f_);
    std::fputc('\n', f_);
  }
  void field(double v) {
    sep();
    char buf[40];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    std::fwrite(buf, 1, static_cast<std::size_t>(r.ptr - buf), f_);
  }
  void field(std::size_t v) {
    sep();
    char buf[24];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    std::fwrite(buf, 1, static_cast<std::size_t>(r.ptr - buf), f_);
  }
  void field(const std::string& s) {
    sep();
    std::fwrite(s.data(), 1, s.size(), f_);
  }
  void endline() {
    std::fputc('\n', f_);
    first_ = true;
  }

private:
  void sep() {
    if (!first_) std::fputc(',', f_);
    first_ = false;
  }
  std::FILE* f_;
  bool first_ = true;
};

}  // namespace qfbsde::csv
