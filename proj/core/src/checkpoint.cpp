#include "anatomist/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "anatomist/errors.hpp"

namespace ana {

namespace {

constexpr char kMagic[8] = {'A', 'N', 'A', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("archive: truncated file");
  return v;
}

}  // namespace

void Archive::append(Entry e) {
  if (index_.count(e.name)) throw IoError("archive: duplicate entry " + e.name);
  index_[e.name] = entries_.size();
  entries_.push_back(std::move(e));
}

void Archive::put_tensor(const std::string& name, const Mat& m) {
  Entry e;
  e.name = name;
  e.kind = Kind::tensor;
  e.tensor = m;
  append(std::move(e));
}

void Archive::put_i64(const std::string& name, std::int64_t v) {
  Entry e;
  e.name = name;
  e.kind = Kind::i64;
  e.i64 = v;
  append(std::move(e));
}

void Archive::put_f64(const std::string& name, double v) {
  Entry e;
  e.name = name;
  e.kind = Kind::f64;
  e.f64 = v;
  append(std::move(e));
}

void Archive::put_string(const std::string& name, const std::string& v) {
  Entry e;
  e.name = name;
  e.kind = Kind::string;
  e.str = v;
  append(std::move(e));
}

bool Archive::has(const std::string& name) const { return index_.count(name) > 0; }

const Archive::Entry& Archive::find(const std::string& name, Kind kind) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IoError("archive: missing entry " + name);
  const Entry& e = entries_[it->second];
  if (e.kind != kind) throw IoError("archive: entry " + name + " has unexpected kind");
  return e;
}

const Mat& Archive::tensor(const std::string& name) const { return find(name, Kind::tensor).tensor; }
std::int64_t Archive::i64(const std::string& name) const { return find(name, Kind::i64).i64; }
double Archive::f64(const std::string& name) const { return find(name, Kind::f64).f64; }
const std::string& Archive::str(const std::string& name) const { return find(name, Kind::string).str; }

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::vector<std::string> Archive::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
  return out;
}

void Archive::write(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("archive: cannot open " + tmp + " for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kFormatVersion);
    write_pod(out, static_cast<std::uint64_t>(entries_.size()));
    for (const auto& e : entries_) {
      write_pod(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_pod(out, static_cast<std::uint8_t>(e.kind));
      switch (e.kind) {
        case Kind::tensor: {
          write_pod(out, static_cast<std::uint64_t>(e.tensor.rows()));
          write_pod(out, static_cast<std::uint64_t>(e.tensor.cols()));
          out.write(reinterpret_cast<const char*>(e.tensor.data()),
                    static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(e.tensor.size())));
          break;
        }
        case Kind::i64: write_pod(out, e.i64); break;
        case Kind::f64: write_pod(out, e.f64); break;
        case Kind::string: {
          write_pod(out, static_cast<std::uint64_t>(e.str.size()));
          out.write(e.str.data(), static_cast<std::streamsize>(e.str.size()));
          break;
        }
      }
    }
    if (!out) throw IoError("archive: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("archive: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("archive: " + path + " is not a checkpoint archive");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw IoError("archive: " + path + " has format_version " + std::to_string(version) +
                  ", this build reads version " + std::to_string(kFormatVersion));
  const auto count = read_pod<std::uint64_t>(in);
  Archive a;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("archive: truncated entry name");
    const auto kind = static_cast<Kind>(read_pod<std::uint8_t>(in));
    Entry e;
    e.name = std::move(name);
    e.kind = kind;
    switch (kind) {
      case Kind::tensor: {
        const auto rows = read_pod<std::uint64_t>(in);
        const auto cols = read_pod<std::uint64_t>(in);
        e.tensor.resize(static_cast<long>(rows), static_cast<long>(cols));
        in.read(reinterpret_cast<char*>(e.tensor.data()),
                static_cast<std::streamsize>(sizeof(double) * rows * cols));
        if (!in) throw IoError("archive: truncated tensor " + e.name);
        break;
      }
      case Kind::i64: e.i64 = read_pod<std::int64_t>(in); break;
      case Kind::f64: e.f64 = read_pod<double>(in); break;
      case Kind::string: {
        const auto len = read_pod<std::uint64_t>(in);
        e.str.resize(len);
        in.read(e.str.data(), static_cast<std::streamsize>(len));
        if (!in) throw IoError("archive: truncated string " + e.name);
        break;
      }
      default: throw IoError("archive: unknown entry kind in " + path);
    }
    a.append(std::move(e));
  }
  return a;
}

}  // namespace ana
