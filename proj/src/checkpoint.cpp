#include "polyscore/checkpoint.hpp"

#include "polyscore/binio.hpp"

namespace polyscore {

namespace {

void write_records(binio::Writer& w, const ParamSet<double>& ps) {
  w.u64(ps.size());
  for (const auto& [name, t] : ps) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
}

ParamSet<double> read_records(binio::Reader& r) {
  ParamSet<double> ps;
  const std::uint64_t count = r.u64();
  std::string prev;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    if (i > 0 && !(prev < name)) r.fail("records not sorted by name ('" + name + "')");
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) r.fail("bad tensor rank for '" + name + "'");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0) r.fail("zero dimension in '" + name + "'");
      if (d > r.remaining() / 8 / numel) r.fail("tensor '" + name + "' larger than the file");
      numel *= d;
    }
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = r.f64();
    ps.emplace(name, TensorD(std::move(shape), std::move(data)));
    prev = std::move(name);
  }
  return ps;
}

void write_model(binio::Writer& w, const Model& m) {
  w.bytes("PSCK");
  w.u32(kCheckpointVersion);
  const ModelConfig& c = m.config;
  for (std::size_t v : {c.layers, c.heads, c.hidden, c.ffn_hidden, c.vocab_size, c.max_positions}) w.u64(v);
  w.f64(c.dropout_p);
  w.u8(static_cast<std::uint8_t>(m.head.arch));
  w.u8(static_cast<std::uint8_t>(m.head.reduction.kind));
  w.u64(m.head.reduction.m);
  w.u8(static_cast<std::uint8_t>(m.head.poly.variant));
  w.u64(m.head.poly.m);
  write_records(w, m.params);
}

}  // namespace

std::string serialize_checkpoint(const Model& model, const OptimizerState* opt) {
  binio::Writer w;
  write_model(w, model);
  w.u8(opt ? 1 : 0);
  if (opt) {
    w.u8(static_cast<std::uint8_t>(opt->kind));
    w.u64(opt->step);
    w.f64(opt->lr_scale);
    w.f64(opt->best_valid);
    w.u64(opt->bad_evals);
    write_records(w, opt->first_moment);
    write_records(w, opt->second_moment);
  }
  return w.take();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  binio::Reader r(bytes, "checkpoint");
  if (r.bytes(4) != "PSCK") r.fail("not a checkpoint (bad magic)");
  if (const auto v = r.u32(); v != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(v));
  Checkpoint ck;
  ModelConfig& c = ck.model.config;
  c.layers = r.u64();
  c.heads = r.u64();
  c.hidden = r.u64();
  c.ffn_hidden = r.u64();
  c.vocab_size = r.u64();
  c.max_positions = r.u64();
  c.dropout_p = r.f64();
  if (auto p = c.problems(); !p.empty()) r.fail("invalid model config: " + p.front());
  const auto arch = r.u8();
  if (arch > 3) r.fail("unknown architecture code");
  ck.model.head.arch = static_cast<Architecture>(arch);
  const auto red = r.u8();
  if (red > 2) r.fail("unknown reduction code");
  ck.model.head.reduction.kind = static_cast<ReductionKind>(red);
  ck.model.head.reduction.m = r.u64();
  const auto var = r.u8();
  if (var > 3) r.fail("unknown poly variant code");
  ck.model.head.poly.variant = static_cast<PolyVariant>(var);
  ck.model.head.poly.m = r.u64();
  ck.model.params = read_records(r);
  if (r.u8()) {
    OptimizerState st;
    const auto kind = r.u8();
    if (kind > 1) r.fail("unknown optimizer code");
    st.kind = static_cast<OptimizerKind>(kind);
    st.step = r.u64();
    st.lr_scale = r.f64();
    st.best_valid = r.f64();
    st.bad_evals = r.u64();
    st.first_moment = read_records(r);
    st.second_moment = read_records(r);
    ck.optimizer = std::move(st);
  }
  if (!r.done()) r.fail("trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState* opt) {
  binio::write_file(path, serialize_checkpoint(model, opt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(binio::read_file(path)); }

std::uint64_t model_fingerprint(const Model& model) {
  binio::Writer w;
  write_model(w, model);
  return binio::fnv1a(w.buffer());
}

}  // namespace polyscore
