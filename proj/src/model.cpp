#include "factual/model.hpp"

#include <cmath>
#include <cstring>

#include "binary_io.hpp"
#include "factual/rng.hpp"

namespace factual {

void ArchitectureConfig::validate() const {
  if (input_size == 0 || stem_stride == 0 || channels.empty() || rep_dim == 0 || proj_hidden == 0 ||
      proj_out == 0 || classes == 0) {
    throw std::invalid_argument("architecture: all dimensions must be positive");
  }
  for (auto c : channels) {
    if (c == 0) throw std::invalid_argument("architecture: channel widths must be positive");
  }
  if (classes < 2) throw std::invalid_argument("architecture: need at least 2 classes");
  if (!std::isfinite(input_mean) || !(input_std > 0.0) || !std::isfinite(input_std)) {
    throw std::invalid_argument("architecture: input_std must be positive and finite");
  }
  if (rep_dim < classes) throw std::invalid_argument("architecture: representation dim must be >= classes");
  std::size_t side = (input_size + 2 - 3) / stem_stride + 1;
  for (std::size_t s = 0; s + 1 < channels.size(); ++s) {
    side /= 2;
    if (side == 0) throw std::invalid_argument("architecture: input too small for the number of stages");
  }
}

ModelParams::ModelParams(ArchitectureConfig arch) : arch_(std::move(arch)) {
  arch_.validate();
  std::size_t cin = 1;
  for (auto c : arch_.channels) {
    conv_w.push_back(Tensor::zeros({c, cin, 3, 3}));
    conv_b.push_back(Tensor::zeros({c}));
    cin = c;
  }
  embed_w = Tensor::zeros({arch_.rep_dim, cin});
  embed_b = Tensor::zeros({arch_.rep_dim});
  proj1_w = Tensor::zeros({arch_.proj_hidden, arch_.rep_dim});
  proj1_b = Tensor::zeros({arch_.proj_hidden});
  proj2_w = Tensor::zeros({arch_.proj_out, arch_.proj_hidden});
  proj2_b = Tensor::zeros({arch_.proj_out});
  cls_w = Tensor::zeros({arch_.classes, arch_.rep_dim});
  cls_b = Tensor::zeros({arch_.classes});
}

std::vector<NamedParam> ModelParams::named() {
  std::vector<NamedParam> out;
  for (std::size_t s = 0; s < conv_w.size(); ++s) {
    out.push_back({"conv" + std::to_string(s) + ".weight", ParamGroup::encoder, &conv_w[s]});
    out.push_back({"conv" + std::to_string(s) + ".bias", ParamGroup::encoder, &conv_b[s]});
  }
  out.push_back({"embed.weight", ParamGroup::encoder, &embed_w});
  out.push_back({"embed.bias", ParamGroup::encoder, &embed_b});
  out.push_back({"proj1.weight", ParamGroup::projector, &proj1_w});
  out.push_back({"proj1.bias", ParamGroup::projector, &proj1_b});
  out.push_back({"proj2.weight", ParamGroup::projector, &proj2_w});
  out.push_back({"proj2.bias", ParamGroup::projector, &proj2_b});
  out.push_back({"classifier.weight", ParamGroup::classifier, &cls_w});
  out.push_back({"classifier.bias", ParamGroup::classifier, &cls_b});
  return out;
}

std::vector<Tensor*> ModelParams::group(ParamGroup g) {
  std::vector<Tensor*> out;
  for (auto& p : named()) {
    if (p.group == g) out.push_back(p.tensor);
  }
  return out;
}

std::vector<const Tensor*> ModelParams::group(ParamGroup g) const {
  std::vector<const Tensor*> out;
  for (auto* t : const_cast<ModelParams*>(this)->group(g)) out.push_back(t);
  return out;
}

ModelParams ModelParams::bind(bool encoder_grad, bool projector_grad, bool classifier_grad) const {
  ModelParams out = *this;
  for (auto& p : out.named()) {
    const bool wants = p.group == ParamGroup::encoder     ? encoder_grad
                       : p.group == ParamGroup::projector ? projector_grad
                                                          : classifier_grad;
    *p.tensor = p.tensor->share_leaf(wants);
  }
  return out;
}

std::vector<std::vector<double>> ModelParams::grads(ParamGroup g) const {
  std::vector<std::vector<double>> out;
  for (const Tensor* t : group(g)) {
    if (auto gr = t->grad()) {
      out.emplace_back(gr->begin(), gr->end());
    } else {
      out.emplace_back(t->size(), 0.0);
    }
  }
  return out;
}

ModelParams init_params(const ArchitectureConfig& arch, std::uint64_t seed) {
  ModelParams params(arch);
  std::size_t index = 0;
  for (auto& p : params.named()) {
    ++index;
    if (p.tensor->shape().size() == 1) continue;  // biases stay zero
    const auto& shape = p.tensor->shape();
    const std::size_t fan_in = numel(shape) / shape[0];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Rng rng(sub_seed(seed, {0x1417, index}));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(p.tensor->size());
    for (auto& v : values) v = dist(rng);
    *p.tensor = Tensor::from(shape, std::move(values));
  }
  return params;
}

Tensor encode(const ModelParams& params, const Tensor& images) {
  const auto& arch = params.arch();
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != arch.input_size || s[3] != arch.input_size) {
    throw TensorError("encode: expected images of shape [B,1," + std::to_string(arch.input_size) + "," +
                      std::to_string(arch.input_size) + "], got " + shape_str(s));
  }
  Tensor h = images;
  if (arch.standardize_input) {
    const std::size_t b = s[0], n = s[2] * s[3];
    const Tensor flat = flatten(images);
    const Tensor mean = matmul(flat, Tensor::filled({1, n}, 1.0 / static_cast<double>(n)), true);
    const Tensor centered = sub(flat, matmul(mean, Tensor::filled({1, n}, 1.0)));
    h = reshape(scale(l2_normalize(centered), std::sqrt(static_cast<double>(n))), {b, 1, s[2], s[3]});
  } else if (arch.input_mean != 0.0 || arch.input_std != 1.0) {
    h = add(scale(images, 1.0 / arch.input_std), Tensor::filled(s, -arch.input_mean / arch.input_std));
  }
  const std::size_t stages = params.conv_w.size();
  for (std::size_t i = 0; i < stages; ++i) {
    h = relu(conv2d(h, params.conv_w[i], params.conv_b[i], i == 0 ? arch.stem_stride : 1, 1));
    h = i + 1 < stages ? max_pool2x2(h) : global_avg_pool(h);
  }
  return dense(h, params.embed_w, params.embed_b);
}

Tensor project(const ModelParams& params, const Tensor& reps) {
  params.projector_reads_->fetch_add(1);
  return l2_normalize(dense(relu(dense(reps, params.proj1_w, params.proj1_b)), params.proj2_w, params.proj2_b));
}

Tensor classify(const ModelParams& params, const Tensor& reps) { return dense(reps, params.cls_w, params.cls_b); }

namespace {
constexpr char kMagic[4] = {'F', 'C', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  detail::ByteWriter w;
  const auto& arch = params.arch();
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arch.input_size));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arch.stem_stride));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arch.channels.size()));
  for (auto c : arch.channels) w.put<std::uint32_t>(static_cast<std::uint32_t>(c));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arch.rep_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arch.proj_hidden));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arch.proj_out));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arch.classes));
  w.put<double>(arch.input_mean);
  w.put<double>(arch.input_std);
  w.put<std::uint8_t>(arch.standardize_input ? 1 : 0);
  for (auto& p : const_cast<ModelParams&>(params).named()) {
    const auto& shape = p.tensor->shape();
    w.put<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(p.tensor->data().data(), p.tensor->size() * sizeof(double));
  }
  detail::write_file<CheckpointError>(path, w.bytes());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader<CheckpointError> r(detail::read_file<CheckpointError>(path));
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("bad magic");
  if (r.get<std::uint32_t>() != kVersion) throw CheckpointError("unsupported checkpoint version");
  ArchitectureConfig arch;
  arch.input_size = r.get<std::uint32_t>();
  arch.stem_stride = r.get<std::uint32_t>();
  const auto stages = r.get<std::uint32_t>();
  if (stages == 0 || stages > 64) throw CheckpointError("invalid stage count");
  arch.channels.clear();
  for (std::uint32_t i = 0; i < stages; ++i) arch.channels.push_back(r.get<std::uint32_t>());
  arch.rep_dim = r.get<std::uint32_t>();
  arch.proj_hidden = r.get<std::uint32_t>();
  arch.proj_out = r.get<std::uint32_t>();
  arch.classes = r.get<std::uint32_t>();
  arch.input_mean = r.get<double>();
  arch.input_std = r.get<double>();
  const auto standardize = r.get<std::uint8_t>();
  if (standardize > 1) throw CheckpointError("invalid architecture block: bad standardization flag");
  arch.standardize_input = standardize == 1;
  ModelParams params;
  try {
    params = ModelParams(arch);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid architecture block: ") + e.what());
  }
  for (auto& p : params.named()) {
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    if (shape != p.tensor->shape()) {
      throw CheckpointError(p.name + ": stored shape " + shape_str(shape) + " does not match architecture " +
                            shape_str(p.tensor->shape()));
    }
    std::vector<double> values(numel(shape));
    r.get_bytes(values.data(), values.size() * sizeof(double));
    *p.tensor = Tensor::from(shape, std::move(values));
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after parameters");
  return params;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (!(a.arch() == b.arch())) return false;
  auto na = const_cast<ModelParams&>(a).named();
  auto nb = const_cast<ModelParams&>(b).named();
  for (std::size_t i = 0; i < na.size(); ++i) {
    const auto da = na[i].tensor->data();
    const auto db = nb[i].tensor->data();
    if (da.size() != db.size() || std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace factual
