#include "gameprior/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace gameprior {
namespace {

constexpr std::array<char, 8> magic{'G', 'P', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint64_t max_count = std::uint64_t{1} << 40;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) { unsigned_le(v, 4); }
  void u64(std::uint64_t v) { unsigned_le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
  }

 private:
  void unsigned_le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint64_t count(const char* what) {
    const std::uint64_t n = u64();
    if (n > max_count) throw CheckpointError(std::string("checkpoint: implausible ") + what + " " + std::to_string(n));
    return n;
  }
  std::string text() {
    std::string s(count("string length"), '\0');
    in_.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (static_cast<std::size_t>(in_.gcount()) != s.size()) truncated();
    return s;
  }
  Tensor tensor() {
    Shape shape(count("rank"));
    for (auto& d : shape) d = count("dimension");
    Tensor t(shape);
    for (double& v : t.values()) v = f64();
    return t;
  }

 private:
  [[noreturn]] static void truncated() { throw CheckpointError("checkpoint: truncated file"); }
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), n);
    if (in_.gcount() != n) truncated();
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  }
  std::istream& in_;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  Writer w(out);
  out.write(magic.data(), magic.size());
  w.u32(checkpoint_version);
  std::ostringstream cfg;
  write_config(cfg, c.config);
  w.text(cfg.str());

  const auto& ps = c.state.params.parameters();
  w.u64(ps.size());
  for (const auto& p : ps) {
    w.text(p.name);
    w.u8(static_cast<std::uint8_t>(p.constraint));
    w.u8(p.trainable ? 1 : 0);
    w.tensor(p.free);
  }
  const AdamState& a = c.state.optimizer;
  if (a.m.size() != ps.size() || a.v.size() != ps.size()) {
    throw CheckpointError("checkpoint: optimizer state does not match the parameters");
  }
  w.f64(a.beta1);
  w.f64(a.beta2);
  w.f64(a.epsilon);
  w.u64(a.step);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    w.tensor(a.m[i]);
    w.tensor(a.v[i]);
  }
  w.u64(c.state.step);
  w.f64(c.state.lr_scale);
  std::ostringstream rng;
  rng << c.state.rng;
  w.text(rng.str());
  if (!out) throw CheckpointError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> head{};
  in.read(head.data(), head.size());
  if (in.gcount() != static_cast<std::streamsize>(head.size()) || head != magic) {
    throw CheckpointError("checkpoint: bad magic, not a checkpoint file");
  }
  Reader r(in);
  const std::uint32_t version = r.u32();
  if (version != checkpoint_version) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  std::istringstream cfg(r.text());
  c.config = parse_config(cfg, "<checkpoint config>");

  const std::uint64_t n = r.count("parameter count");
  for (std::uint64_t i = 0; i < n; ++i) {
    Parameter p;
    p.name = r.text();
    const std::uint8_t constraint = r.u8();
    if (constraint > static_cast<std::uint8_t>(Constraint::positive)) {
      throw CheckpointError("checkpoint: bad constraint for '" + p.name + "'");
    }
    p.constraint = static_cast<Constraint>(constraint);
    p.trainable = r.u8() != 0;
    p.free = r.tensor();
    c.state.params.parameters().push_back(std::move(p));
  }
  AdamState& a = c.state.optimizer;
  a.beta1 = r.f64();
  a.beta2 = r.f64();
  a.epsilon = r.f64();
  a.step = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    a.m.push_back(r.tensor());
    a.v.push_back(r.tensor());
  }
  c.state.step = r.u64();
  c.state.lr_scale = r.f64();
  std::istringstream rng(r.text());
  rng >> c.state.rng;
  if (!rng) throw CheckpointError("checkpoint: bad RNG state");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(path.string() + ": cannot open for writing");
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  return read_checkpoint(in);
}

}  // namespace gameprior
