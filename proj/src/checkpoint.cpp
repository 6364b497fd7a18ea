#include "spnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "spnet/model_spec.hpp"
#include "spnet/slimmable.hpp"

namespace spnet {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'N', 'E', 'T', 'C', 'K', 'P'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(int v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void ints(const std::vector<int>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (int x : v) i32(x);
  }
  void bools(const std::vector<bool>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (bool x : v) u8(x ? 1 : 0);
  }
  void tensor(const Tensor<float>& t) {
    const Shape& s = t.shape();
    i32(s.n);
    i32(s.c);
    i32(s.h);
    i32(s.w);
    for (std::size_t i = 0; i < t.size(); ++i) f32(t[i]);
  }
  void section(const char tag[4], const Writer& body) {
    bytes(tag, 4);
    u64(body.out_.size());
    bytes(body.out_.data(), body.out_.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n, std::string name)
      : p_(p), n_(n), name_(std::move(name)) {}

  void need(std::size_t k) const {
    if (n_ - pos_ < k) throw FormatError(name_ + ": truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p_[pos_++]} << (8 * i);
    return v;
  }
  int i32() { return static_cast<int>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t elem_size) {
    const std::uint32_t k = u32();
    need(static_cast<std::size_t>(k) * elem_size);
    return k;
  }
  std::vector<int> ints() {
    std::vector<int> v(count(4));
    for (int& x : v) x = i32();
    return v;
  }
  std::vector<bool> bools() {
    std::vector<bool> v(count(1));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = u8() != 0;
    return v;
  }
  void tensor_into(Tensor<float>& t, const std::string& what) {
    Shape s;
    s.n = i32();
    s.c = i32();
    s.h = i32();
    s.w = i32();
    if (!(s == t.shape())) {
      throw FormatError(name_ + ": " + what + " has shape " + s.str() + ", expected " +
                        t.shape().str());
    }
    need(t.size() * 4);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = f32();
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == n_; }
  std::size_t pos() const { return pos_; }
  const std::string& name() const { return name_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string name_;
};

void write_join(Writer& w, const JoinMetadata& m) {
  w.i32(m.channels);
  w.bools(m.mask_main);
  w.bools(m.mask_shortcut);
  w.ints(m.index_main);
  w.ints(m.index_shortcut);
  w.ints(m.index_union);
}

JoinMetadata read_join(Reader& r) {
  JoinMetadata m;
  m.channels = r.i32();
  m.mask_main = r.bools();
  m.mask_shortcut = r.bools();
  m.index_main = r.ints();
  m.index_shortcut = r.ints();
  m.index_union = r.ints();
  return m;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net,
                                               std::uint64_t config_digest) {
  Writer out;
  out.bytes(kMagic, 8);
  out.u32(kCheckpointVersion);

  Writer spec;
  const std::string json = to_json(net.spec());
  spec.bytes(json.data(), json.size());
  out.section("SPEC", spec);

  Writer parm;
  parm.u32(static_cast<std::uint32_t>(net.bank_count()));
  auto params = const_cast<Network<float>&>(net).parameters();
  parm.u32(static_cast<std::uint32_t>(params.size()));
  for (const Param<float>* p : params) parm.tensor(p->value);
  out.section("PARM", parm);

  Writer bnst;
  bnst.u32(static_cast<std::uint32_t>(net.bns.size()));
  for (const BnLayer<float>& layer : net.bns) {
    bnst.u32(static_cast<std::uint32_t>(layer.banks.size()));
    for (const BnState<float>& b : layer.banks) {
      bnst.tensor(b.running_mean);
      bnst.tensor(b.running_var);
      bnst.f64(b.momentum);
      bnst.f64(b.eps);
    }
  }
  out.section("BNST", bnst);

  Writer ordr;
  ordr.u32(static_cast<std::uint32_t>(net.order.size()));
  for (const auto& o : net.order) ordr.ints(o);
  out.section("ORDR", ordr);

  Writer embd;
  embd.u32(static_cast<std::uint32_t>(net.widths().size()));
  for (double w : net.widths().widths) embd.f64(w);
  embd.u32(static_cast<std::uint32_t>(net.embedded().size()));
  for (const PrunedArchitecture& a : net.embedded()) {
    embd.f64(a.source_width);
    embd.i64(a.flops);
    embd.ints(a.counts);
  }
  out.section("EMBD", embd);

  Writer join;
  join.u32(static_cast<std::uint32_t>(net.embedded().size()));
  for (std::size_t i = 0; i < net.embedded().size(); ++i) {
    const SubNetworkView v = embedded_view(net, i);
    join.u32(static_cast<std::uint32_t>(v.joins.size()));
    for (const JoinMetadata& m : v.joins) write_join(join, m);
  }
  out.section("JOIN", join);

  Writer conf;
  conf.u64(config_digest);
  out.section("CONF", conf);
  return std::move(out.buffer());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  Reader top(bytes.data(), bytes.size(), name);
  if (top.str(8) != std::string(kMagic, 8)) throw FormatError(name + ": not a checkpoint (bad magic)");
  const std::uint32_t version = top.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(name + ": checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> sections;
  while (!top.done()) {
    const std::string tag = top.str(4);
    const std::uint64_t len = top.u64();
    const std::size_t at = top.pos();
    top.need(len);
    top.str(len);
    if (!sections.emplace(tag, std::make_pair(at, static_cast<std::size_t>(len))).second) {
      throw FormatError(name + ": duplicate section " + tag);
    }
  }
  auto open = [&](const char* tag) {
    const auto it = sections.find(tag);
    if (it == sections.end()) throw FormatError(name + ": missing section " + tag);
    return Reader(bytes.data() + it->second.first, it->second.second, name + " [" + tag + "]");
  };
  auto finish = [](const Reader& r) {
    if (!r.done()) throw FormatError(r.name() + ": trailing bytes");
  };

  Reader spec = open("SPEC");
  ModelSpec model;
  try {
    model = model_spec_from_json(spec.str(sections["SPEC"].second));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(name + ": bad model spec: " + e.what());
  }
  Checkpoint ck{Network<float>(model), {}, 0};
  Network<float>& net = ck.net;

  Reader parm = open("PARM");
  const std::uint32_t banks = parm.u32();
  if (banks < 1 || banks > 64) throw FormatError(name + ": bad BN bank count");
  net.set_bank_count(banks);
  auto params = net.parameters();
  const std::uint32_t np = parm.u32();
  if (np != params.size()) {
    throw FormatError(name + ": " + std::to_string(np) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    parm.tensor_into(params[i]->value, "parameter " + std::to_string(i));
    params[i]->grad = Tensor<float>(params[i]->value.shape());
  }
  finish(parm);

  Reader bnst = open("BNST");
  if (bnst.u32() != net.bns.size()) throw FormatError(name + ": BN layer count mismatch");
  for (BnLayer<float>& layer : net.bns) {
    if (bnst.u32() != layer.banks.size()) throw FormatError(name + ": BN bank count mismatch");
    for (BnState<float>& b : layer.banks) {
      bnst.tensor_into(b.running_mean, "running mean");
      bnst.tensor_into(b.running_var, "running var");
      b.momentum = bnst.f64();
      b.eps = bnst.f64();
    }
  }
  finish(bnst);

  Reader ordr = open("ORDR");
  if (ordr.u32() != net.order.size()) throw FormatError(name + ": channel space count mismatch");
  for (std::vector<int>& o : net.order) {
    std::vector<int> loaded = ordr.ints();
    std::vector<char> seen(o.size(), 0);
    if (loaded.size() != o.size()) throw FormatError(name + ": channel order size mismatch");
    for (int id : loaded) {
      if (id < 0 || id >= static_cast<int>(o.size()) || seen[id]) {
        throw FormatError(name + ": channel order is not a permutation");
      }
      seen[id] = 1;
    }
    o = std::move(loaded);
  }
  finish(ordr);

  Reader embd = open("EMBD");
  std::vector<double> widths(embd.count(8));
  for (double& w : widths) w = embd.f64();
  std::vector<PrunedArchitecture> archs(embd.count(16));
  for (PrunedArchitecture& a : archs) {
    a.source_width = embd.f64();
    a.flops = embd.i64();
    a.counts = embd.ints();
  }
  finish(embd);
  if (!archs.empty()) {
    try {
      net.set_embedded(WidthList(widths), std::move(archs));
    } catch (const std::exception& e) {
      throw FormatError(name + ": bad embedded architectures: " + e.what());
    }
  }

  Reader join = open("JOIN");
  ck.joins.resize(join.count(4));
  if (ck.joins.size() != net.embedded().size()) throw FormatError(name + ": join table size mismatch");
  for (std::size_t i = 0; i < ck.joins.size(); ++i) {
    ck.joins[i].resize(join.count(1));
    for (JoinMetadata& m : ck.joins[i]) m = read_join(join);
    if (ck.joins[i] != embedded_view(net, i).joins) {
      throw FormatError(name + ": join metadata of architecture " + std::to_string(i) +
                        " disagrees with the channel orders");
    }
  }
  finish(join);

  Reader conf = open("CONF");
  ck.config_digest = conf.u64();
  finish(conf);
  return ck;
}

void save_checkpoint(const std::string& path, const Network<float>& net,
                     std::uint64_t config_digest) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(net, config_digest);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path);
}

}  // namespace spnet
