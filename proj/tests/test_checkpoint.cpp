#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "anatomist/checkpoint.hpp"
#include "anatomist/errors.hpp"

using namespace ana;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("archive round-trips every entry kind") {
  Archive a;
  Mat t(2, 3);
  t << 1, 2, 3, 4, 5, 6;
  a.put_tensor("w", t);
  a.put_i64("step", 42);
  a.put_f64("momentum", 0.996);
  a.put_string("config", "{\"epochs\":3}");

  const std::string path = temp_path("anat_test_archive.bin");
  a.write(path);
  const Archive b = Archive::read(path);
  CHECK((b.tensor("w") - t).cwiseAbs().maxCoeff() == 0.0);
  CHECK(b.i64("step") == 42);
  CHECK(b.f64("momentum") == 0.996);
  CHECK(b.str("config") == "{\"epochs\":3}");
  CHECK(b.names() == std::vector<std::string>{"w", "step", "momentum", "config"});
  std::filesystem::remove(path);
}

TEST_CASE("save -> load -> save is byte-identical") {
  Archive a;
  a.put_i64("trainer/epoch", 7);
  Mat t = Mat::Random(5, 4);
  a.put_tensor("student/embed.w", t);
  a.put_f64("momentum/base_m", 0.996);
  a.put_string("config/train", "{}");

  const std::string p1 = temp_path("anat_test_rt1.bin");
  const std::string p2 = temp_path("anat_test_rt2.bin");
  a.write(p1);
  Archive::read(p1).write(p2);
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("reader rejects unknown format versions and foreign files") {
  const std::string path = temp_path("anat_test_badver.bin");
  {
    Archive a;
    a.put_i64("x", 1);
    a.write(path);
  }
  // Corrupt the version field (bytes 8..11).
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t bogus = 999;
    f.write(reinterpret_cast<const char*>(&bogus), sizeof(bogus));
  }
  CHECK_THROWS_WITH_AS(Archive::read(path), doctest::Contains("format_version"), IoError);
  std::filesystem::remove(path);

  const std::string garbage = temp_path("anat_test_garbage.bin");
  {
    std::ofstream f(garbage, std::ios::binary);
    f << "not an archive at all";
  }
  CHECK_THROWS_AS(Archive::read(garbage), IoError);
  std::filesystem::remove(garbage);

  CHECK_THROWS_AS(Archive::read(temp_path("anat_test_missing.bin")), IoError);
}

TEST_CASE("duplicate names and missing entries are errors") {
  Archive a;
  a.put_i64("x", 1);
  CHECK_THROWS_AS(a.put_f64("x", 2.0), IoError);
  CHECK_THROWS_AS(a.i64("y"), IoError);
  CHECK_THROWS_AS(a.f64("x"), IoError);  // wrong kind
  CHECK(a.has("x"));
  CHECK_FALSE(a.has("y"));
}

TEST_CASE("prefix listing preserves order") {
  Archive a;
  a.put_i64("opt/w/t", 1);
  a.put_i64("other", 2);
  a.put_i64("opt/b/t", 3);
  CHECK(a.names_with_prefix("opt/") == std::vector<std::string>{"opt/w/t", "opt/b/t"});
}

TEST_SUITE_END();
