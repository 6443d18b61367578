#include "collapse/model.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "collapse/errors.hpp"

namespace collapse {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (n_layer < 1) {
    fail("n_layer must be >= 1");
  }
  if (n_head < 1) {
    fail("n_head must be >= 1");
  }
  if (n_embd < 1 || n_embd % n_head != 0) {
    fail("n_embd (" + std::to_string(n_embd) + ") must be a positive multiple of n_head (" +
         std::to_string(n_head) + ")");
  }
  if (block_size < 2) {
    fail("block_size must be >= 2");
  }
  if (vocab_size < 2) {
    fail("vocab_size must be >= 2");
  }
  if (!(dropout >= 0.0F && dropout < 1.0F)) {
    fail("dropout must be in [0, 1)");
  }
}

ModelConfig preset_config(std::string_view name) {
  ModelConfig c;
  c.block_size = 100;
  c.dropout = 0.0F;
  c.bias = false;
  c.vocab_size = static_cast<int>(kByteVocabSize);
  if (name == "tiny") {
    c.n_layer = 2;
    c.n_head = 2;
    c.n_embd = 64;
  } else if (name == "small") {
    c.n_layer = 4;
    c.n_head = 4;
    c.n_embd = 128;
  } else if (name == "medium") {
    c.n_layer = 6;
    c.n_head = 6;
    c.n_embd = 192;
  } else if (name == "paper-default") {
    c.n_layer = 12;
    c.n_head = 12;
    c.n_embd = 768;
    c.vocab_size = 50257;
  } else {
    throw ConfigError("unknown model preset '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"tiny", "small", "medium", "paper-default"}; }

namespace {

struct SchemaEntry {
  std::string name;
  Shape shape;
};

// The single source of truth for parameter names, shapes and order.
std::vector<SchemaEntry> schema(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.n_embd);
  std::vector<SchemaEntry> s;
  s.push_back({"wte.weight", {static_cast<std::size_t>(c.vocab_size), d}});
  s.push_back({"wpe.weight", {static_cast<std::size_t>(c.block_size), d}});
  for (int i = 0; i < c.n_layer; ++i) {
    const std::string p = "h." + std::to_string(i) + ".";
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
      s.push_back({p + name + ".weight", {in, out}});
      if (c.bias) {
        s.push_back({p + name + ".bias", {out}});
      }
    };
    auto norm = [&](const std::string& name) {
      s.push_back({p + name + ".weight", {d}});
      if (c.bias) {
        s.push_back({p + name + ".bias", {d}});
      }
    };
    norm("ln_1");
    linear("attn.c_attn", d, 3 * d);
    linear("attn.c_proj", d, d);
    norm("ln_2");
    linear("mlp.c_fc", d, 4 * d);
    linear("mlp.c_proj", 4 * d, d);
  }
  s.push_back({"ln_f.weight", {d}});
  if (c.bias) {
    s.push_back({"ln_f.bias", {d}});
  }
  return s;
}

// Slots in a ModelState, aligned with schema().
std::vector<Tensor*> slots(ModelState& m) {
  std::vector<Tensor*> out{&m.wte, &m.wpe};
  const bool bias = m.config.bias;
  for (BlockParams& b : m.blocks) {
    auto add = [&](Tensor& w, Tensor& bb) {
      out.push_back(&w);
      if (bias) {
        out.push_back(&bb);
      }
    };
    add(b.ln1_gain, b.ln1_bias);
    add(b.attn_qkv, b.attn_qkv_bias);
    add(b.attn_proj, b.attn_proj_bias);
    add(b.ln2_gain, b.ln2_bias);
    add(b.mlp_fc, b.mlp_fc_bias);
    add(b.mlp_proj, b.mlp_proj_bias);
  }
  out.push_back(&m.lnf_gain);
  if (bias) {
    out.push_back(&m.lnf_bias);
  }
  return out;
}

bool is_norm_gain(const std::string& name) {
  return name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") || name == "ln_f.weight";
}

bool is_residual_projection(const std::string& name) {
  return name.ends_with("attn.c_proj.weight") || name.ends_with("mlp.c_proj.weight");
}

ModelState allocate(const ModelConfig& config, VocabKind kind) {
  config.validate();
  ModelState m;
  m.config = config;
  m.vocab_kind = kind;
  m.blocks.resize(static_cast<std::size_t>(config.n_layer));
  const auto entries = schema(config);
  const auto targets = slots(m);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    *targets[i] = Tensor::parameter(entries[i].shape);
  }
  return m;
}

constexpr float kNormEps = 1e-5F;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  Tensor y = matmul(x, w, tape);
  return b.defined() ? add_bias(y, b, tape) : y;
}

// Runs embeddings and all blocks; returns the residual stream [batch*T x d]
// before the final norm.
Tensor trunk(const ModelState& m, std::span<const TokenId> tokens, std::size_t batch, Mode mode,
             Tape* tape, Rng* dropout_rng) {
  const ModelConfig& c = m.config;
  if (batch == 0 || tokens.empty() || tokens.size() % batch != 0) {
    throw DimensionError("forward: " + std::to_string(tokens.size()) +
                         " tokens do not split into " + std::to_string(batch) + " sequences");
  }
  const std::size_t seq = tokens.size() / batch;
  if (seq > static_cast<std::size_t>(c.block_size)) {
    throw ContextLengthError("forward: sequence of " + std::to_string(seq) +
                             " tokens exceeds block_size " + std::to_string(c.block_size));
  }
  for (const TokenId id : tokens) {
    if (id < 0 || id >= c.vocab_size) {
      throw IndexError("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(c.vocab_size));
    }
  }
  const bool drop = mode == Mode::train && c.dropout > 0.0F;
  if (drop && dropout_rng == nullptr) {
    throw ContractError("forward: train mode with dropout needs a dropout rng");
  }
  auto maybe_dropout = [&](const Tensor& x) { return drop ? dropout(x, c.dropout, *dropout_rng, tape) : x; };

  std::vector<TokenId> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = static_cast<TokenId>(i % seq);
  }
  Tensor x = add(embedding(m.wte, tokens, tape), embedding(m.wpe, positions, tape), tape);
  x = maybe_dropout(x);
  for (const BlockParams& b : m.blocks) {
    Tensor h = layer_norm(x, b.ln1_gain, b.ln1_bias, kNormEps, tape);
    Tensor qkv = linear(h, b.attn_qkv, b.attn_qkv_bias, tape);
    Tensor att = causal_self_attention(qkv, batch, seq, static_cast<std::size_t>(c.n_head), tape);
    att = maybe_dropout(linear(att, b.attn_proj, b.attn_proj_bias, tape));
    x = add(x, att, tape);
    h = layer_norm(x, b.ln2_gain, b.ln2_bias, kNormEps, tape);
    Tensor f = gelu(linear(h, b.mlp_fc, b.mlp_fc_bias, tape), tape);
    f = maybe_dropout(linear(f, b.mlp_proj, b.mlp_proj_bias, tape));
    x = add(x, f, tape);
  }
  return x;
}

// ---- checkpoint encoding helpers ---------------------------------------------

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

std::uint64_t get_le(const std::string& in, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

std::string format_float(float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int parse_int(const std::string& s, const std::string& key) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("checkpoint header: bad integer for " + key + ": '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<NamedTensor> ModelState::named_parameters() const {
  auto& self = const_cast<ModelState&>(*this);
  const auto entries = schema(config);
  const auto targets = slots(self);
  std::vector<NamedTensor> out;
  out.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out.push_back({entries[i].name, *targets[i]});
  }
  return out;
}

std::vector<Tensor> ModelState::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) {
    out.push_back(nt.value);
  }
  return out;
}

void ModelState::zero_grad() {
  for (Tensor* t : slots(*this)) {
    t->zero_grad();
  }
}

ModelState ModelState::clone() const {
  ModelState copy = allocate(config, vocab_kind);
  const auto src = named_parameters();
  const auto dst = copy.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    Tensor d = dst[i].value;
    std::ranges::copy(src[i].value.data(), d.mutable_data().begin());
  }
  return copy;
}

bool ModelState::bit_equal(const ModelState& other) const {
  if (!(config == other.config) || vocab_kind != other.vocab_kind) {
    return false;
  }
  const auto a = named_parameters();
  const auto b = other.named_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].value.data();
    const auto y = b[i].value.data();
    if (a[i].name != b[i].name || x.size() != y.size() ||
        std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

ModelState zero_model(const ModelConfig& config, VocabKind kind) {
  ModelState m = allocate(config, kind);
  for (auto& [name, t] : m.named_parameters()) {
    if (is_norm_gain(name)) {
      std::ranges::fill(t.mutable_data(), 1.0F);
    }
  }
  return m;
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  ModelState m = zero_model(config);
  Rng rng = Rng::stream(seed, "init");
  const double base_std = 0.02;
  const double residual_std = base_std / std::sqrt(2.0 * config.n_layer);
  for (auto& [name, t] : m.named_parameters()) {
    if (is_norm_gain(name) || name.ends_with(".bias")) {
      continue;
    }
    const double stddev = is_residual_projection(name) ? residual_std : base_std;
    for (float& v : t.mutable_data()) {
      v = static_cast<float>(rng.normal() * stddev);
    }
  }
  return m;
}

std::int64_t count_params(const ModelState& model) {
  std::int64_t n = 0;
  for (const auto& nt : model.named_parameters()) {
    n += static_cast<std::int64_t>(nt.value.numel());
  }
  return n;
}

std::int64_t count_params(const ModelConfig& config) {
  config.validate();
  std::int64_t n = 0;
  for (const auto& e : schema(config)) {
    n += static_cast<std::int64_t>(shape_numel(e.shape));
  }
  return n;
}

Tensor forward(const ModelState& model, std::span<const TokenId> tokens, std::size_t batch,
               Mode mode, Tape* tape, Rng* dropout_rng) {
  Tensor x = trunk(model, tokens, batch, mode, tape, dropout_rng);
  x = layer_norm(x, model.lnf_gain, model.lnf_bias, kNormEps, tape);
  return matmul_transposed(x, model.wte, tape);
}

std::vector<float> last_position_logits(const ModelState& model, std::span<const TokenId> tokens) {
  Tensor x = trunk(model, tokens, 1, Mode::eval, nullptr, nullptr);
  x = slice_rows(x, x.shape()[0] - 1, 1);
  x = layer_norm(x, model.lnf_gain, model.lnf_bias, kNormEps);
  Tensor logits = matmul_transposed(x, model.wte);
  return {logits.data().begin(), logits.data().end()};
}

Decoder::Decoder(const ModelState& model) : model_(&model) {
  const auto cells = static_cast<std::size_t>(model.config.block_size) *
                     static_cast<std::size_t>(model.config.n_embd);
  keys_.assign(model.blocks.size(), std::vector<float>(cells, 0.0F));
  values_.assign(model.blocks.size(), std::vector<float>(cells, 0.0F));
}

std::vector<float> Decoder::prefill(std::span<const TokenId> tokens) {
  length_ = 0;
  return extend(tokens);
}

std::vector<float> Decoder::step(TokenId token) { return extend(std::span<const TokenId>(&token, 1)); }

std::vector<float> Decoder::extend(std::span<const TokenId> tokens) {
  const ModelState& m = *model_;
  const ModelConfig& c = m.config;
  const std::size_t n = tokens.size();
  const std::size_t pos0 = length_;
  if (n == 0) {
    throw DimensionError("decoder: no tokens to process");
  }
  if (pos0 + n > static_cast<std::size_t>(c.block_size)) {
    throw ContextLengthError("decoder: context of " + std::to_string(pos0 + n) +
                             " tokens exceeds block_size " + std::to_string(c.block_size));
  }
  for (const TokenId id : tokens) {
    if (id < 0 || id >= c.vocab_size) {
      throw IndexError("decoder: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(c.vocab_size));
    }
  }
  const auto d = static_cast<std::size_t>(c.n_embd);
  const auto n_head = static_cast<std::size_t>(c.n_head);
  const std::size_t hd = d / n_head;
  const float scale_factor = 1.0F / std::sqrt(static_cast<float>(hd));
  std::vector<float> probs(pos0 + n);
  std::vector<double> scratch(pos0 + n);

  std::vector<TokenId> positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    positions[i] = static_cast<TokenId>(pos0 + i);
  }
  Tensor x = add(embedding(m.wte, tokens), embedding(m.wpe, positions));
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const BlockParams& b = m.blocks[l];
    const bool last_layer = l + 1 == m.blocks.size();
    const Tensor h = layer_norm(x, b.ln1_gain, b.ln1_bias, kNormEps);
    const Tensor qkv = linear(h, b.attn_qkv, b.attn_qkv_bias, nullptr);
    const float* qkv_data = qkv.data().data();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(qkv_data + r * 3 * d + d, d, keys_[l].data() + (pos0 + r) * d);
      std::copy_n(qkv_data + r * 3 * d + 2 * d, d, values_[l].data() + (pos0 + r) * d);
    }
    // Later layers never look at earlier rows of the final layer's output.
    const std::size_t first = last_layer ? n - 1 : 0;
    Tensor att = Tensor::zeros({n - first, d});
    float* att_data = att.mutable_data().data();
    for (std::size_t r = first; r < n; ++r) {
      for (std::size_t hh = 0; hh < n_head; ++hh) {
        detail::attend_row(qkv_data + r * 3 * d + hh * hd, keys_[l].data() + hh * hd,
                           values_[l].data() + hh * hd, d, pos0 + r + 1, hd, scale_factor,
                           probs.data(), scratch.data(), att_data + (r - first) * d + hh * hd);
      }
    }
    check_finite(att.data(), "causal_self_attention");
    if (first > 0) {
      x = slice_rows(x, first, n - first);
    }
    x = add(x, linear(att, b.attn_proj, b.attn_proj_bias, nullptr));
    const Tensor h2 = layer_norm(x, b.ln2_gain, b.ln2_bias, kNormEps);
    const Tensor f = gelu(linear(h2, b.mlp_fc, b.mlp_fc_bias, nullptr));
    x = add(x, linear(f, b.mlp_proj, b.mlp_proj_bias, nullptr));
  }
  length_ = pos0 + n;
  if (x.shape()[0] > 1) {
    x = slice_rows(x, x.shape()[0] - 1, 1);
  }
  x = layer_norm(x, m.lnf_gain, m.lnf_bias, kNormEps);
  const Tensor logits = matmul_transposed(x, m.wte);
  return {logits.data().begin(), logits.data().end()};
}

// ---- checkpoint --------------------------------------------------------------

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config;
  const auto params = model.named_parameters();
  std::ostringstream header;
  header << "config.n_layer=" << c.n_layer << '\n'
         << "config.n_head=" << c.n_head << '\n'
         << "config.n_embd=" << c.n_embd << '\n'
         << "config.block_size=" << c.block_size << '\n'
         << "config.vocab_size=" << c.vocab_size << '\n'
         << "config.dropout=" << format_float(c.dropout) << '\n'
         << "config.bias=" << (c.bias ? "true" : "false") << '\n'
         << "vocab_kind=" << vocab_kind_name(model.vocab_kind) << '\n'
         << "tensor_count=" << params.size() << '\n';
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    header << "tensor=" << name << ' ';
    for (std::size_t i = 0; i < t.shape().size(); ++i) {
      header << (i ? "x" : "") << t.shape()[i];
    }
    header << ' ' << offset << ' ' << t.numel() << '\n';
    offset += t.numel() * sizeof(float);
  }

  std::string bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(bytes, kCheckpointVersion);
  const std::string h = header.str();
  put_u32(bytes, static_cast<std::uint32_t>(h.size()));
  bytes += h;
  put_u64(bytes, offset);
  bytes.reserve(bytes.size() + offset);
  for (const auto& nt : params) {
    for (const float v : nt.value.data()) {
      put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("cannot open checkpoint for writing: " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw FormatError("failed writing checkpoint: " + path.string());
  }
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open checkpoint: " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("bad magic" + where);
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + where);
  }
  const auto header_len = static_cast<std::size_t>(get_le(bytes, 12, 4));
  if (16 + header_len + 8 > bytes.size()) {
    throw FormatError("truncated header" + where);
  }
  const std::string header = bytes.substr(16, header_len);
  const std::uint64_t payload_len = get_le(bytes, 16 + header_len, 8);
  const std::size_t payload_start = 16 + header_len + 8;
  if (bytes.size() - payload_start < payload_len) {
    throw FormatError("truncated payload" + where + ": expected " + std::to_string(payload_len) +
                      " bytes, found " + std::to_string(bytes.size() - payload_start));
  }
  if (bytes.size() - payload_start > payload_len) {
    throw FormatError("trailing bytes after payload" + where);
  }

  std::map<std::string, std::string> fields;
  struct Record {
    std::string name;
    Shape shape;
    std::uint64_t offset;
    std::uint64_t count;
  };
  std::vector<Record> records;
  std::istringstream lines(header);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("malformed header line '" + line + "'" + where);
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "tensor") {
      std::istringstream rec(value);
      Record r;
      std::string dims;
      if (!(rec >> r.name >> dims >> r.offset >> r.count)) {
        throw FormatError("malformed tensor record '" + value + "'" + where);
      }
      std::istringstream ds(dims);
      std::string tok;
      while (std::getline(ds, tok, 'x')) {
        r.shape.push_back(static_cast<std::size_t>(parse_int(tok, r.name)));
      }
      records.push_back(std::move(r));
    } else {
      fields[key] = value;
    }
  }
  auto field = [&](const std::string& key) {
    const auto it = fields.find(key);
    if (it == fields.end()) {
      throw FormatError("checkpoint header missing " + key + where);
    }
    return it->second;
  };

  ModelConfig c;
  c.n_layer = parse_int(field("config.n_layer"), "config.n_layer");
  c.n_head = parse_int(field("config.n_head"), "config.n_head");
  c.n_embd = parse_int(field("config.n_embd"), "config.n_embd");
  c.block_size = parse_int(field("config.block_size"), "config.block_size");
  c.vocab_size = parse_int(field("config.vocab_size"), "config.vocab_size");
  {
    const std::string d = field("config.dropout");
    const auto res = std::from_chars(d.data(), d.data() + d.size(), c.dropout);
    if (res.ec != std::errc()) {
      throw FormatError("bad config.dropout" + where);
    }
  }
  const std::string bias = field("config.bias");
  if (bias != "true" && bias != "false") {
    throw FormatError("bad config.bias '" + bias + "'" + where);
  }
  c.bias = bias == "true";
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string(e.what()) + where);
  }
  const VocabKind kind = parse_vocab_kind(field("vocab_kind"));
  if (static_cast<std::size_t>(parse_int(field("tensor_count"), "tensor_count")) != records.size()) {
    throw FormatError("tensor_count does not match tensor records" + where);
  }

  ModelState m = allocate(c, kind);
  auto params = m.named_parameters();
  if (records.size() != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(records.size()) +
                      " tensors, schema expects " + std::to_string(params.size()) + where);
  }
  std::map<std::string, const Record*> by_name;
  for (const Record& r : records) {
    if (!by_name.emplace(r.name, &r).second) {
      throw FormatError("duplicate tensor " + r.name + where);
    }
  }
  // Byte ranges must be disjoint and cover the payload exactly.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  std::uint64_t total = 0;
  for (auto& [name, t] : params) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError("missing tensor " + name + where);
    }
    const Record& r = *it->second;
    if (r.shape != t.shape() || r.count != t.numel()) {
      throw FormatError("tensor " + name + " has shape " + shape_string(r.shape) + ", expected " +
                        shape_string(t.shape()) + where);
    }
    const std::uint64_t len = r.count * sizeof(float);
    if (r.offset > payload_len || len > payload_len - r.offset) {
      throw FormatError("tensor " + name + " extends past the payload" + where);
    }
    ranges.emplace_back(r.offset, r.offset + len);
    total += len;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = std::bit_cast<float>(
          static_cast<std::uint32_t>(get_le(bytes, payload_start + r.offset + 4 * i, 4)));
    }
  }
  std::ranges::sort(ranges);
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw FormatError("overlapping tensor ranges" + where);
    }
  }
  if (total != payload_len) {
    throw FormatError("payload length " + std::to_string(payload_len) +
                      " does not equal the sum of tensor sizes " + std::to_string(total) + where);
  }
  return m;
}

}  // namespace collapse
