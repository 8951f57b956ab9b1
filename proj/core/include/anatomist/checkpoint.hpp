#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "anatomist/image.hpp"

namespace ana {

// Single-file binary archive of named tensors and scalars. Entry order is
// preserved through read/write, so save -> load -> save is byte-identical.
// Readers reject any format_version they do not know.
class Archive {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  void put_tensor(const std::string& name, const Mat& m);
  void put_i64(const std::string& name, std::int64_t v);
  void put_f64(const std::string& name, double v);
  void put_string(const std::string& name, const std::string& v);

  bool has(const std::string& name) const;
  const Mat& tensor(const std::string& name) const;
  std::int64_t i64(const std::string& name) const;
  double f64(const std::string& name) const;
  const std::string& str(const std::string& name) const;
  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  // Writes to <path>.tmp then renames, so a crash never leaves a torn file.
  void write(const std::string& path) const;
  static Archive read(const std::string& path);

 private:
  enum class Kind : std::uint8_t { tensor = 0, i64 = 1, f64 = 2, string = 3 };
  struct Entry {
    std::string name;
    Kind kind;
    Mat tensor;
    std::int64_t i64 = 0;
    double f64 = 0.0;
    std::string str;
  };

  const Entry& find(const std::string& name, Kind kind) const;
  void append(Entry e);

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ana
