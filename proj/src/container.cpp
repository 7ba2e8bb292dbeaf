#include "strainest/container.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

static_assert(std::endian::native == std::endian::little,
              "container format is defined for little-endian hosts");

namespace strainest {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'N', 'E', 'S', 'T', '\0'};

void append_raw(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename T>
void append(std::vector<std::uint8_t>& out, T v) {
  append_raw(out, &v, sizeof(T));
}

void pad8(std::vector<std::uint8_t>& out) {
  while (out.size() % 8 != 0) out.push_back(0);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void align8() {
    while (pos_ % 8 != 0) take(1);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("container truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t payload_bytes(Container::Kind kind, std::uint64_t count) {
  switch (kind) {
    case Container::Kind::Dense:
      return count * sizeof(double);
    case Container::Kind::Sparse:
      return count * (2 * sizeof(std::uint64_t) + sizeof(double));
    case Container::Kind::Ints:
      return count * sizeof(std::int64_t);
    case Container::Kind::Text:
      return count;
  }
  throw FormatError("unknown block kind");
}

std::uint64_t payload_count(Container::Kind kind, std::size_t bytes) {
  switch (kind) {
    case Container::Kind::Dense:
      return bytes / sizeof(double);
    case Container::Kind::Sparse:
      return bytes / (2 * sizeof(std::uint64_t) + sizeof(double));
    case Container::Kind::Ints:
      return bytes / sizeof(std::int64_t);
    case Container::Kind::Text:
      return bytes;
  }
  return 0;
}

}  // namespace

Digest& Digest::update(std::span<const std::uint8_t> bytes) {
  for (std::uint8_t b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

Digest& Digest::update(std::string_view text) {
  return update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Digest& Digest::update(const Matrix& m) {
  update(static_cast<std::int64_t>(m.rows()));
  update(static_cast<std::int64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) update(m(i, j));
  return *this;
}

Digest& Digest::update(const Vector& v) {
  update(static_cast<std::int64_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) update(v[i]);
  return *this;
}

Digest& Digest::update(double x) {
  return update(std::span(reinterpret_cast<const std::uint8_t*>(&x), sizeof(x)));
}

Digest& Digest::update(std::int64_t x) {
  return update(std::span(reinterpret_cast<const std::uint8_t*>(&x), sizeof(x)));
}

std::string Digest::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::string digest_hex(std::span<const std::uint8_t> bytes) { return Digest{}.update(bytes).hex(); }

std::string digest_file(const std::filesystem::path& path) { return digest_hex(read_file(path)); }

void Container::put(const std::string& name, const Matrix& m) {
  Block b{Kind::Dense, static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols()), {}};
  b.payload.reserve(static_cast<std::size_t>(m.size()) * sizeof(double));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) append(b.payload, m(i, j));
  blocks_[name] = std::move(b);
}

void Container::put(const std::string& name, const Vector& v) { put(name, Matrix(v)); }

void Container::put(const std::string& name, const SparseMatrix& s) {
  struct Entry {
    std::uint64_t r, c;
    double v;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(s.nonZeros()));
  for (Index k = 0; k < s.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(s, k); it; ++it)
      entries.push_back({static_cast<std::uint64_t>(it.row()), static_cast<std::uint64_t>(it.col()), it.value()});
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.r != b.r ? a.r < b.r : a.c < b.c; });
  // Compressed Eigen storage is already duplicate-free; fold defensively anyway.
  std::vector<Entry> folded;
  for (const auto& e : entries) {
    if (!folded.empty() && folded.back().r == e.r && folded.back().c == e.c)
      folded.back().v += e.v;
    else
      folded.push_back(e);
  }
  Block b{Kind::Sparse, static_cast<std::uint64_t>(s.rows()), static_cast<std::uint64_t>(s.cols()), {}};
  for (const auto& e : folded) {
    append(b.payload, e.r);
    append(b.payload, e.c);
    append(b.payload, e.v);
  }
  blocks_[name] = std::move(b);
}

void Container::put(const std::string& name, const std::vector<std::int64_t>& ints) {
  Block b{Kind::Ints, ints.size(), 1, {}};
  append_raw(b.payload, ints.data(), ints.size() * sizeof(std::int64_t));
  blocks_[name] = std::move(b);
}

void Container::put_text(const std::string& name, const std::string& text) {
  Block b{Kind::Text, text.size(), 1, {}};
  append_raw(b.payload, text.data(), text.size());
  blocks_[name] = std::move(b);
}

void Container::put_scalar(const std::string& name, double x) {
  Matrix m(1, 1);
  m(0, 0) = x;
  put(name, m);
}

const Container::Block& Container::get(const std::string& name, Kind kind) const {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw FormatError("container has no block '" + name + "'");
  if (it->second.kind != kind) throw FormatError("container block '" + name + "' has unexpected kind");
  return it->second;
}

Matrix Container::dense(const std::string& name) const {
  const auto& b = get(name, Kind::Dense);
  Matrix m(static_cast<Index>(b.rows), static_cast<Index>(b.cols));
  const auto* p = b.payload.data();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      std::memcpy(&m(i, j), p, sizeof(double));
      p += sizeof(double);
    }
  return m;
}

Vector Container::vector(const std::string& name) const {
  Matrix m = dense(name);
  if (m.cols() != 1) throw FormatError("block '" + name + "' is not a column vector");
  return m.col(0);
}

double Container::scalar(const std::string& name) const {
  Matrix m = dense(name);
  if (m.size() != 1) throw FormatError("block '" + name + "' is not a scalar");
  return m(0, 0);
}

SparseMatrix Container::sparse(const std::string& name) const {
  const auto& b = get(name, Kind::Sparse);
  const std::size_t stride = 2 * sizeof(std::uint64_t) + sizeof(double);
  const std::size_t n = b.payload.size() / stride;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t r, c;
    double v;
    const auto* p = b.payload.data() + k * stride;
    std::memcpy(&r, p, 8);
    std::memcpy(&c, p + 8, 8);
    std::memcpy(&v, p + 16, 8);
    if (r >= b.rows || c >= b.cols) throw FormatError("sparse block '" + name + "' index out of range");
    trips.emplace_back(static_cast<Index>(r), static_cast<Index>(c), v);
  }
  SparseMatrix s(static_cast<Index>(b.rows), static_cast<Index>(b.cols));
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

std::vector<std::int64_t> Container::ints(const std::string& name) const {
  const auto& b = get(name, Kind::Ints);
  std::vector<std::int64_t> out(b.payload.size() / sizeof(std::int64_t));
  std::memcpy(out.data(), b.payload.data(), b.payload.size());
  return out;
}

std::string Container::text(const std::string& name) const {
  const auto& b = get(name, Kind::Text);
  return {b.payload.begin(), b.payload.end()};
}

std::vector<std::uint8_t> Container::serialize() const {
  std::vector<std::uint8_t> out;
  append_raw(out, kMagic, sizeof(kMagic));
  append(out, kVersion);
  append(out, static_cast<std::uint32_t>(blocks_.size()));
  for (const auto& [name, b] : blocks_) {
    append(out, static_cast<std::uint32_t>(b.kind));
    append(out, static_cast<std::uint32_t>(name.size()));
    append_raw(out, name.data(), name.size());
    pad8(out);
    append(out, b.rows);
    append(out, b.cols);
    append(out, payload_count(b.kind, b.payload.size()));
    append_raw(out, b.payload.data(), b.payload.size());
    pad8(out);
  }
  append(out, Digest{}.update(out).value());
  return out;
}

Container Container::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 24) throw FormatError("container too short");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  const auto body = bytes.first(bytes.size() - 8);
  if (Digest{}.update(body).value() != stored) throw FormatError("container checksum mismatch");

  Reader r(body);
  auto magic = r.take(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("bad container magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();

  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind_raw = r.get<std::uint32_t>();
    if (kind_raw < 1 || kind_raw > 4) throw FormatError("unknown block kind");
    const auto kind = static_cast<Kind>(kind_raw);
    const auto name_len = r.get<std::uint32_t>();
    auto name_bytes = r.take(name_len);
    r.align8();
    Block b{kind, r.get<std::uint64_t>(), r.get<std::uint64_t>(), {}};
    const auto n = r.get<std::uint64_t>();
    auto payload = r.take(payload_bytes(kind, n));
    b.payload.assign(payload.begin(), payload.end());
    r.align8();
    if (kind == Kind::Dense && n != b.rows * b.cols) throw FormatError("dense block size mismatch");
    c.blocks_[std::string(name_bytes.begin(), name_bytes.end())] = std::move(b);
  }
  if (r.pos() != body.size()) throw FormatError("trailing bytes in container");
  return c;
}

void Container::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Container Container::load(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return parse(bytes);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StaleArtifactError("missing artifact: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace strainest
