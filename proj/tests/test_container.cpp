#include "strainest/container.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>

using namespace strainest;
using namespace testing_support;

TEST_CASE("container round trip preserves every block kind") {
  Container c;
  const Matrix M = random_matrix(3, 4, 1);
  const Vector v = random_vector(5, 2);
  std::vector<Eigen::Triplet<double>> trips{{0, 1, 2.0}, {2, 0, -1.0}, {0, 1, 0.5}};
  SparseMatrix S(3, 3);
  S.setFromTriplets(trips.begin(), trips.end());
  c.put("M", M);
  c.put("v", v);
  c.put("S", S);
  c.put("ints", std::vector<std::int64_t>{3, -1, 7});
  c.put_text("note", "hello");
  c.put_scalar("x", 1.25);

  const auto bytes = c.serialize();
  CHECK(bytes.size() % 8 == 0);
  const Container r = Container::parse(bytes);
  CHECK(r.dense("M") == M);
  CHECK(r.vector("v") == v);
  CHECK(Matrix(r.sparse("S")) == Matrix(S));
  CHECK(r.sparse("S").coeff(0, 1) == 2.5);
  CHECK(r.ints("ints") == std::vector<std::int64_t>{3, -1, 7});
  CHECK(r.text("note") == "hello");
  CHECK(r.scalar("x") == 1.25);
  CHECK(r.serialize() == bytes);
}

TEST_CASE("container rejects corruption, truncation and wrong kinds") {
  Container c;
  c.put("M", random_matrix(2, 2, 3));
  auto bytes = c.serialize();

  auto flipped = bytes;
  flipped[40] ^= 0x01;
  CHECK_THROWS_AS(Container::parse(flipped), FormatError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 8);
  CHECK_THROWS_AS(Container::parse(truncated), FormatError);

  const Container ok = Container::parse(bytes);
  CHECK_THROWS_AS(ok.text("M"), FormatError);
  CHECK_THROWS_AS(ok.dense("missing"), FormatError);
}

TEST_CASE("container save is atomic and load detects on-disk corruption") {
  const auto dir = scratch_dir("container");
  Container c;
  c.put("v", random_vector(10, 4));
  const auto path = dir / "x.bin";
  c.save(path);
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  CHECK(Container::load(path).vector("v") == c.vector("v"));

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(48);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(Container::load(path), FormatError);
  CHECK_THROWS_AS(Container::load(dir / "absent.bin"), StaleArtifactError);
}

TEST_CASE("FNV-1a digest matches reference values") {
  // Published 64-bit FNV-1a test vectors.
  CHECK(Digest{}.update(std::string_view("")).value() == 0xcbf29ce484222325ULL);
  CHECK(Digest{}.update(std::string_view("a")).value() == 0xaf63dc4c8601ec8cULL);
  CHECK(Digest{}.update(std::string_view("foobar")).value() == 0x85944171f73967e8ULL);
}
