#include "clear/expcli/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>

namespace clear::expcli {

using nn::Shape;
using nn::Tensor;

namespace {

constexpr char kMagic[4] = {'C', 'L', 'R', '1'};
constexpr double kExactF32 = 16777216.0;  // 2^24

struct Record {
  Shape shape;
  std::vector<float> values;
};

class Writer {
public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void record(const std::string& name, const Shape& shape, const std::vector<float>& values) {
    u32(static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    u32(static_cast<std::uint32_t>(shape.size()));
    for (int e : shape) u32(static_cast<std::uint32_t>(e));
    for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
  }
  void tensor(const std::string& name, const Tensor& t) {
    std::vector<float> v(t.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(t[i]);
    record(name, t.shape(), v);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(bytes.begin() + pos, bytes.begin() + pos + n);
    pos += n;
    return s;
  }
  void need(std::size_t n) const {
    if (bytes.size() - pos < n) throw std::runtime_error("checkpoint: truncated at byte " + std::to_string(pos));
  }
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
};

std::vector<float> limbs(std::uint64_t v) {
  std::vector<float> out;
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<float>((v >> (16 * i)) & 0xffffu));
  return out;
}

std::uint64_t from_limbs(const std::vector<float>& v, std::size_t at) {
  std::uint64_t out = 0;
  for (int i = 0; i < 4; ++i) {
    const float f = v.at(at + i);
    if (!(f >= 0.0f && f <= 65535.0f) || f != static_cast<float>(static_cast<std::uint32_t>(f)))
      throw std::runtime_error("checkpoint: malformed meta.rng limb");
    out |= static_cast<std::uint64_t>(f) << (16 * i);
  }
  return out;
}

Tensor to_tensor(const Record& r) {
  Tensor t(r.shape);
  for (std::size_t i = 0; i < r.values.size(); ++i) t[i] = r.values[i];
  return t;
}

void assign(Tensor& dst, const Record& r, const std::string& name) {
  if (!dst.empty() && dst.shape() != r.shape)
    throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': expected " + nn::shape_str(dst.shape()) +
                             ", file has " + nn::shape_str(r.shape));
  dst = to_tensor(r);
}

const Record& take(std::map<std::string, Record>& recs, const std::string& name) {
  auto it = recs.find(name);
  if (it == recs.end()) throw std::runtime_error("checkpoint: missing record '" + name + "'");
  return it->second;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const nn::ParamSet& ps, const CheckpointMeta& meta) {
  std::size_t count = 2 + ps.params().size() + 2 * ps.stats().size() + 3 * ps.adam().size();
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(count));

  std::vector<float> text(meta.config.size());
  for (std::size_t i = 0; i < meta.config.size(); ++i) text[i] = static_cast<unsigned char>(meta.config[i]);
  w.record("meta.config", {static_cast<int>(text.size())}, text);
  std::vector<float> rng = limbs(meta.seed);
  const auto cur = limbs(meta.cursor);
  rng.insert(rng.end(), cur.begin(), cur.end());
  w.record("meta.rng", {8}, rng);

  for (const auto& [name, v] : ps.params()) w.tensor(name, v.value());
  for (const auto& [name, s] : ps.stats()) {
    w.tensor("bn.mean/" + name, s.running_mean);
    w.tensor("bn.var/" + name, s.running_var);
  }
  for (const auto& [name, a] : ps.adam()) {
    if (static_cast<double>(a.step) >= kExactF32)
      throw std::runtime_error("checkpoint: Adam step count of '" + name + "' exceeds the f32-exact range");
    w.tensor("adam.m/" + name, a.m);
    w.tensor("adam.v/" + name, a.v);
    w.record("adam.step/" + name, {1}, {static_cast<float>(a.step)});
  }
  return std::move(w.out);
}

CheckpointMeta decode_checkpoint(const std::vector<std::uint8_t>& bytes, nn::ParamSet& ps) {
  Reader r(bytes);
  if (r.text(4) != std::string(kMagic, 4)) throw std::runtime_error("checkpoint: bad magic (not a CLR1 file)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t count = r.u32();
  std::map<std::string, Record> recs;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.text(r.u32());
    Record rec;
    const std::uint32_t rank = r.u32();
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32();
      rec.shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    r.need(numel * 4);
    rec.values.resize(numel);
    for (float& f : rec.values) f = std::bit_cast<float>(r.u32());
    if (!recs.emplace(name, std::move(rec)).second) throw std::runtime_error("checkpoint: duplicate record '" + name + "'");
  }
  if (r.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes after the last record");

  CheckpointMeta meta;
  for (float f : take(recs, "meta.config").values) meta.config.push_back(static_cast<char>(static_cast<unsigned char>(f)));
  const auto& rng = take(recs, "meta.rng").values;
  meta.seed = from_limbs(rng, 0);
  meta.cursor = from_limbs(rng, 4);
  recs.erase("meta.config");
  recs.erase("meta.rng");

  for (const auto& [name, v] : ps.params())
    if (!recs.count(name)) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
  for (auto& [name, rec] : recs) {
    const auto slash = name.find('/');
    if (slash == std::string::npos) {
      if (ps.contains(name))
        assign(ps.get(name).mutable_value(), rec, name);
      else
        ps.add(name, to_tensor(rec));
      continue;
    }
    const std::string kind = name.substr(0, slash), owner = name.substr(slash + 1);
    if (kind == "bn.mean" || kind == "bn.var") {
      auto& s = ps.stats()[owner];
      assign(kind == "bn.mean" ? s.running_mean : s.running_var, rec, name);
    } else if (kind == "adam.m" || kind == "adam.v") {
      auto& a = ps.adam()[owner];
      assign(kind == "adam.m" ? a.m : a.v, rec, name);
    } else if (kind == "adam.step") {
      if (rec.values.size() != 1) throw std::runtime_error("checkpoint: malformed '" + name + "'");
      ps.adam()[owner].step = static_cast<std::int64_t>(rec.values[0]);
    } else {
      throw std::runtime_error("checkpoint: unknown record '" + name + "'");
    }
  }
  return meta;
}

void save_checkpoint(const std::filesystem::path& path, const nn::ParamSet& ps, const CheckpointMeta& meta) {
  const auto bytes = encode_checkpoint(ps, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, nn::ParamSet& ps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes, ps);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace clear::expcli
