// SPDX-License-Identifier: Apache-2.0
#include "urkle/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace urkle {

const char* to_string(Likelihood l) { return l == Likelihood::Bernoulli ? "bernoulli" : "gaussian"; }

Likelihood parse_likelihood(const std::string& s) {
  if (s == "bernoulli") return Likelihood::Bernoulli;
  if (s == "gaussian") return Likelihood::Gaussian;
  throw ConfigError("unknown likelihood '" + s + "'");
}

// ------------------------------------------------------------- manifest

namespace {

std::string join_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

Shape parse_shape(const std::string& v) {
  Shape s;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(parse_size("input_shape", part));
  if (s.size() != 3) throw ConfigError("input_shape must be CxHxW, got '" + v + "'");
  return s;
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string BundleSpec::to_manifest() const {
  std::ostringstream os;
  os << "input_shape=" << join_shape(encoder.input_shape) << '\n'
     << "backbone=" << encoder.backbone << '\n'
     << "d_z=" << encoder.d_z << '\n'
     << "deterministic=" << (encoder.deterministic ? 1 : 0) << '\n'
     << "logvar_min=" << format_real(encoder.logvar_min) << '\n'
     << "logvar_max=" << format_real(encoder.logvar_max) << '\n'
     << "decoder=" << (heads.decoder ? 1 : 0) << '\n'
     << "likelihood=" << to_string(heads.likelihood) << '\n'
     << "num_classes=" << heads.num_classes << '\n'
     << "classifier_width=" << heads.classifier_width << '\n'
     << "projector_width=" << heads.projector_width << '\n';
  return os.str();
}

BundleSpec BundleSpec::from_manifest(const std::string& text) {
  BundleSpec spec;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("manifest line without '=': " + line);
    const std::string key = line.substr(0, eq), v = line.substr(eq + 1);
    if (key == "input_shape") spec.encoder.input_shape = parse_shape(v);
    else if (key == "backbone") spec.encoder.backbone = v;
    else if (key == "d_z") spec.encoder.d_z = parse_size(key, v);
    else if (key == "deterministic") spec.encoder.deterministic = parse_size(key, v) != 0;
    else if (key == "logvar_min") spec.encoder.logvar_min = parse_real(key, v);
    else if (key == "logvar_max") spec.encoder.logvar_max = parse_real(key, v);
    else if (key == "decoder") spec.heads.decoder = parse_size(key, v) != 0;
    else if (key == "likelihood") spec.heads.likelihood = parse_likelihood(v);
    else if (key == "num_classes") spec.heads.num_classes = parse_size(key, v);
    else if (key == "classifier_width") spec.heads.classifier_width = parse_size(key, v);
    else if (key == "projector_width") spec.heads.projector_width = parse_size(key, v);
    else if (key == "seed") continue;
    else throw FormatError("unknown manifest key '" + key + "'");
  }
  return spec;
}

// ------------------------------------------------------------ networks

namespace {

struct Token {
  enum Kind { Conv, Fc, Relu, Tanh, Gap, Flatten } kind;
  std::size_t width = 0, stride = 1, kernel = 3;
};

std::vector<Token> parse_backbone(const std::string& text) {
  std::vector<Token> out;
  std::stringstream ss(text);
  std::string tok;
  auto bad = [&] { return ConfigError("bad backbone token '" + tok + "'"); };
  // Reads digits starting at `pos`, advancing it.
  auto number = [&](std::size_t& pos) {
    const std::size_t start = pos;
    while (pos < tok.size() && std::isdigit(static_cast<unsigned char>(tok[pos]))) ++pos;
    if (pos == start) throw bad();
    return static_cast<std::size_t>(std::stoull(tok.substr(start, pos - start)));
  };
  while (std::getline(ss, tok, ',')) {
    if (tok == "relu") out.push_back({Token::Relu});
    else if (tok == "tanh") out.push_back({Token::Tanh});
    else if (tok == "gap") out.push_back({Token::Gap});
    else if (tok == "flatten") out.push_back({Token::Flatten});
    else if (tok.rfind("fc", 0) == 0) {
      std::size_t pos = 2;
      Token t{Token::Fc, number(pos)};
      if (pos != tok.size() || t.width == 0) throw bad();
      out.push_back(t);
    } else if (tok.rfind("conv", 0) == 0) {
      std::size_t pos = 4;
      Token t{Token::Conv, number(pos)};
      if (pos >= tok.size() || tok[pos] != 's') throw bad();
      ++pos;
      t.stride = number(pos);
      if (pos < tok.size()) {
        if (tok[pos] != 'k') throw bad();
        ++pos;
        t.kernel = number(pos);
      }
      if (pos != tok.size() || t.width == 0 || t.stride == 0 || t.kernel % 2 == 0) throw bad();
      out.push_back(t);
    } else {
      throw bad();
    }
  }
  if (out.empty()) throw ConfigError("empty backbone");
  return out;
}

}  // namespace

template <typename T>
nn::Sequential<T> build_backbone(const EncoderSpec& spec) {
  if (spec.input_shape.size() != 3) throw ConfigError("input_shape must have 3 entries");
  if (spec.d_z == 0) throw ConfigError("d_z must be positive");
  if (!(spec.logvar_min < spec.logvar_max)) throw ConfigError("logvar_min must be below logvar_max");
  nn::Sequential<T> net;
  Shape shape = spec.input_shape;
  for (const Token& t : parse_backbone(spec.backbone)) {
    switch (t.kind) {
      case Token::Conv:
        if (shape.size() != 3) throw ConfigError("conv after the spatial dimensions were removed");
        net.template emplace<nn::Conv2d<T>>(shape[0], t.width, t.stride, t.kernel, t.kernel / 2);
        break;
      case Token::Fc:
        if (shape.size() != 1) {
          net.template emplace<nn::Flatten<T>>();
          shape = {shape_size(shape)};
        }
        net.template emplace<nn::Linear<T>>(shape[0], t.width);
        break;
      case Token::Relu: net.template emplace<nn::ReLU<T>>(); break;
      case Token::Tanh: net.template emplace<nn::Tanh<T>>(); break;
      case Token::Gap: net.template emplace<nn::GlobalAvgPool<T>>(); break;
      case Token::Flatten: net.template emplace<nn::Flatten<T>>(); break;
    }
    shape = net.layer(net.size() - 1).output_shape(shape);
  }
  if (shape.size() != 1 || shape[0] != 2 * spec.d_z) {
    throw ConfigError("backbone emits " + shape_string(shape) + " per input, expected 2*d_z = " +
                      std::to_string(2 * spec.d_z));
  }
  return net;
}

template <typename T>
nn::Sequential<T> build_decoder(const EncoderSpec& spec) {
  // Replay the backbone to recover the geometry of every conv / fc stage.
  struct Stage {
    Shape in, out;
    Token tok;
  };
  std::vector<Stage> stages;
  Shape shape = spec.input_shape;
  for (const Token& t : parse_backbone(spec.backbone)) {
    Shape next = shape;
    if (t.kind == Token::Conv) {
      const std::size_t pad = t.kernel / 2;
      next = {t.width, (shape[1] + 2 * pad - t.kernel) / t.stride + 1, (shape[2] + 2 * pad - t.kernel) / t.stride + 1};
      stages.push_back({shape, next, t});
    } else if (t.kind == Token::Fc) {
      next = {t.width};
      stages.push_back({{shape_size(shape)}, next, t});
    } else if (t.kind == Token::Gap || t.kind == Token::Flatten) {
      next = t.kind == Token::Gap ? Shape{shape[0]} : Shape{shape_size(shape)};
    }
    shape = next;
  }
  if (stages.empty()) throw ConfigError("backbone has no learnable stage to mirror");

  nn::Sequential<T> dec;
  const std::size_t dz = spec.d_z;
  const bool conv = stages.back().tok.kind == Token::Conv;
  if (conv) {
    // z -> d_z feature maps at the resolution of the last conv stage, then
    // one transposed conv per backbone conv, in reverse.
    const Shape& last = stages.back().out;
    dec.template emplace<nn::Linear<T>>(dz, dz * last[1] * last[2]);
    dec.template emplace<nn::Unflatten<T>>(Shape{dz, last[1], last[2]});
    dec.template emplace<nn::ReLU<T>>();
    std::size_t channels = dz;
    for (std::size_t i = stages.size(); i-- > 0;) {
      const Stage& s = stages[i];
      if (s.tok.kind != Token::Conv) throw ConfigError("cannot mirror a backbone mixing fc before conv");
      const std::size_t pad = s.tok.kernel / 2;
      const std::size_t base = (s.out[1] - 1) * s.tok.stride + s.tok.kernel - 2 * pad;
      if (s.in[1] < base || s.in[1] - base >= s.tok.stride) throw ConfigError("conv stage cannot be mirrored");
      dec.template emplace<nn::ConvTranspose2d<T>>(channels, s.in[0], s.tok.stride, s.in[1] - base, s.tok.kernel, pad);
      channels = s.in[0];
      if (i > 0) dec.template emplace<nn::ReLU<T>>();
    }
  } else {
    std::size_t width = dz;
    for (std::size_t i = stages.size(); i-- > 0;) {
      const std::size_t target = stages[i].in[0];
      dec.template emplace<nn::Linear<T>>(width, target);
      width = target;
      if (i > 0) dec.template emplace<nn::ReLU<T>>();
    }
    dec.template emplace<nn::Unflatten<T>>(spec.input_shape);
  }
  return dec;
}

template <typename T>
nn::Sequential<T> build_classifier(std::size_t d_z, std::size_t width, std::size_t num_classes) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  nn::Sequential<T> c;
  if (width == 0) {
    c.template emplace<nn::Linear<T>>(d_z, num_classes);
    return c;
  }
  c.template emplace<nn::Linear<T>>(d_z, width);
  c.template emplace<nn::BatchNorm1d<T>>(width);
  c.template emplace<nn::ReLU<T>>();
  c.template emplace<nn::Linear<T>>(width, width);
  c.template emplace<nn::BatchNorm1d<T>>(width);
  c.template emplace<nn::ReLU<T>>();
  c.template emplace<nn::Linear<T>>(width, num_classes);
  return c;
}

template <typename T>
nn::Sequential<T> build_projector(std::size_t d_z, std::size_t width) {
  nn::Sequential<T> p;
  p.template emplace<nn::Linear<T>>(d_z, d_z);
  p.template emplace<nn::ReLU<T>>();
  p.template emplace<nn::Linear<T>>(d_z, width);
  return p;
}

template <typename T>
Tensor<T> reconstruction(const Tensor<T>& decoder_out, Likelihood likelihood) {
  if (likelihood == Likelihood::Gaussian) return decoder_out;
  Tensor<T> r = decoder_out;
  for (auto& v : r.values()) v = T{1} / (T{1} + std::exp(-v));
  return r;
}

// -------------------------------------------------------------- Encoder

template <typename T>
Encoder<T>::Encoder(EncoderSpec spec) : spec_(std::move(spec)), net_(build_backbone<T>(spec_)) {}

template <typename T>
Tensor<T> Encoder<T>::batched(const Tensor<T>& x) const {
  const Shape& in = spec_.input_shape;
  if (x.rank() == in.size() && x.shape() == in) {
    Shape s{1};
    s.insert(s.end(), in.begin(), in.end());
    return x.reshaped(std::move(s));
  }
  if (x.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), x.shape().begin() + 1)) {
    throw ContractViolation("encoder expects inputs of shape " + shape_string(in) + ", got " +
                            shape_string(x.shape()));
  }
  return x;
}

template <typename T>
GaussianBatch<T> Encoder<T>::forward(const Tensor<T>& x, nn::Mode mode, Trace* trace) {
  const Tensor<T> out = net_.forward(batched(x), mode, trace ? &trace->net : nullptr);
  const std::size_t n = out.batch(), dz = spec_.d_z;
  GaussianBatch<T> g{Tensor<T>({n, dz}), Tensor<T>({n, dz})};
  Tensor<T> squash({n, dz});
  const T mid = static_cast<T>(0.5 * (spec_.logvar_min + spec_.logvar_max));
  const T half = static_cast<T>(0.5 * (spec_.logvar_max - spec_.logvar_min));
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = out.data() + i * 2 * dz;
    for (std::size_t j = 0; j < dz; ++j) {
      g.mean[i * dz + j] = row[j];
      if (spec_.deterministic) {
        g.log_var[i * dz + j] = static_cast<T>(spec_.logvar_min);
      } else {
        const T t = std::tanh((row[dz + j] - mid) / half);
        squash[i * dz + j] = t;
        g.log_var[i * dz + j] = mid + half * t;
      }
    }
  }
  if (trace) trace->squash = std::move(squash);
  return g;
}

template <typename T>
Tensor<T> Encoder<T>::backward(const GaussianBatch<T>& grad, const Trace& trace, bool param_grads) {
  const std::size_t n = grad.batch(), dz = spec_.d_z;
  Tensor<T> d_out({n, 2 * dz});
  for (std::size_t i = 0; i < n; ++i) {
    T* row = d_out.data() + i * 2 * dz;
    for (std::size_t j = 0; j < dz; ++j) {
      row[j] = grad.mean[i * dz + j];
      if (!spec_.deterministic) {
        const T t = trace.squash[i * dz + j];
        row[dz + j] = grad.log_var[i * dz + j] * (T{1} - t * t);
      }
    }
  }
  return net_.backward(d_out, trace.net, param_grads);
}

// --------------------------------------------------------------- bundle

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelBundle<T>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto add = [&](const char* prefix, nn::Sequential<T>& net) {
    for (auto& [name, t] : net.named_tensors()) out.emplace_back(std::string(prefix) + "." + name, t);
  };
  add("encoder", encoder.net());
  if (decoder) add("decoder", *decoder);
  if (classifier) add("classifier", *classifier);
  if (projector) add("projector", *projector);
  return out;
}

template <typename T>
std::vector<nn::Param<T>*> ModelBundle<T>::params() {
  std::vector<nn::Param<T>*> out = encoder.net().params();
  for (auto* net : {decoder ? &*decoder : nullptr, classifier ? &*classifier : nullptr,
                    projector ? &*projector : nullptr}) {
    if (!net) continue;
    for (auto* p : net->params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::size_t ModelBundle<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->value.size();
  return n;
}

template <typename T>
void ModelBundle<T>::zero_grad() {
  for (auto* p : params()) p->grad.fill(T{0});
}

template <typename T>
ModelBundle<T> init_bundle(const BundleSpec& spec, std::uint64_t seed) {
  ModelBundle<T> b;
  b.spec = spec;
  b.seed = seed;
  b.encoder = Encoder<T>(spec.encoder);
  Rng enc_rng(seed, {1});
  b.encoder.net().initialize(enc_rng);
  if (spec.heads.decoder) {
    b.decoder = build_decoder<T>(spec.encoder);
    Rng r(seed, {2});
    b.decoder->initialize(r);
  }
  if (spec.heads.num_classes > 0) {
    b.classifier = build_classifier<T>(spec.encoder.d_z, spec.heads.classifier_width, spec.heads.num_classes);
    Rng r(seed, {3});
    b.classifier->initialize(r);
  }
  if (spec.heads.projector_width > 0) {
    b.projector = build_projector<T>(spec.encoder.d_z, spec.heads.projector_width);
    Rng r(seed, {4});
    b.projector->initialize(r);
  }
  return b;
}

// ----------------------------------------------------------- checkpoint

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void f32(float* dst, std::size_t n, const char* what) {
    need(n * 4, what);
    std::memcpy(dst, bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

template <typename T>
void save_bundle(ModelBundle<T>& bundle, const std::string& path) {
  std::string out = "URKL";
  put_u32(out, CHECKPOINT_VERSION);
  const std::string manifest = bundle.spec.to_manifest() + "seed=" + std::to_string(bundle.seed) + "\n";
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out += manifest;
  auto tensors = bundle.named_tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : t->values()) {
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) throw NumericError("refusing to save non-finite parameter '" + name + "'");
      char buf[4];
      std::memcpy(buf, &f, 4);
      out.append(buf, 4);
    }
  }
  // Write to a sibling file first so a crash never leaves a half-written checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + tmp + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

template <typename T>
ModelBundle<T> load_bundle(const std::string& path) {
  Reader r(read_file(path));
  const std::string magic = r.str(4, "magic");
  if (magic != "URKL") throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != CHECKPOINT_VERSION) {
    throw VersionError("checkpoint format version " + std::to_string(version) + ", this build reads " +
                       std::to_string(CHECKPOINT_VERSION));
  }
  const std::uint32_t mlen = r.u32("manifest length");
  const std::string manifest = r.str(mlen, "manifest");
  std::uint64_t seed = 0;
  if (auto p = manifest.find("seed="); p != std::string::npos) {
    seed = std::stoull(manifest.substr(p + 5, manifest.find('\n', p) - p - 5));
  }
  ModelBundle<T> bundle;
  try {
    bundle = init_bundle<T>(BundleSpec::from_manifest(manifest), seed);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid checkpoint manifest: ") + e.what());
  }

  std::map<std::string, Tensor<T>*> slots;
  for (auto& [name, t] : bundle.named_tensors()) slots.emplace(name, t);
  const std::uint32_t count = r.u32("tensor count");
  if (count != slots.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, its manifest implies " +
                      std::to_string(slots.size()));
  }
  std::vector<float> buf;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::string name = r.str(r.u32("name length"), "tensor name");
    auto it = slots.find(name);
    if (it == slots.end()) throw ParseError("unexpected tensor '" + name + "'", at);
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw ParseError("implausible tensor rank", r.offset() - 4);
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dimension");
    if (shape != it->second->shape()) {
      throw ParseError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                           shape_string(it->second->shape()),
                       at);
    }
    buf.resize(shape_size(shape));
    r.f32(buf.data(), buf.size(), "tensor data");
    for (std::size_t k = 0; k < buf.size(); ++k) (*it->second)[k] = static_cast<T>(buf[k]);
    slots.erase(it);
  }
  if (!r.done()) throw ParseError("trailing bytes after the last tensor", r.offset());
  return bundle;
}

#define URKLE_INSTANTIATE(T)                                                                    \
  template class Encoder<T>;                                                                    \
  template struct ModelBundle<T>;                                                               \
  template nn::Sequential<T> build_backbone<T>(const EncoderSpec&);                             \
  template nn::Sequential<T> build_decoder<T>(const EncoderSpec&);                              \
  template nn::Sequential<T> build_classifier<T>(std::size_t, std::size_t, std::size_t);        \
  template nn::Sequential<T> build_projector<T>(std::size_t, std::size_t);                      \
  template Tensor<T> reconstruction(const Tensor<T>&, Likelihood);                              \
  template ModelBundle<T> init_bundle<T>(const BundleSpec&, std::uint64_t);                     \
  template void save_bundle(ModelBundle<T>&, const std::string&);                               \
  template ModelBundle<T> load_bundle<T>(const std::string&);

URKLE_INSTANTIATE(float)
URKLE_INSTANTIATE(double)
#undef URKLE_INSTANTIATE

}  // namespace urkle
