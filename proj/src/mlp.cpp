#include "tscopf/mlp.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace tscopf::nn {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'C', 'O', 'P', 'F', 'N', 'N'};

}  // namespace

Mlp::Mlp(std::vector<int> layer_dims) : dims_(std::move(layer_dims)) { layout(); }

Mlp::Mlp(std::vector<int> layer_dims, Vector lo, Vector hi)
    : dims_(std::move(layer_dims)), out_(OutputActivation::TanhScaled), lo_(std::move(lo)), hi_(std::move(hi)) {
  layout();
  if (lo_.size() != dims_.back() || hi_.size() != dims_.back())
    throw ShapeError("output bounds do not match output dimension");
  if (((hi_ - lo_).array() < 0.0).any()) throw ShapeError("output bounds require lo <= hi");
}

void Mlp::layout() {
  if (dims_.size() < 2) throw ShapeError("an MLP needs at least input and output layers");
  for (int d : dims_)
    if (d <= 0) throw ShapeError("layer dimensions must be positive");
  offsets_.clear();
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    offsets_.push_back(offset);
    offset += static_cast<std::size_t>(dims_[l + 1]) * (static_cast<std::size_t>(dims_[l]) + 1);
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
}

void Mlp::initialize(std::mt19937_64& rng) {
  for (std::size_t l = 0; l < n_layers(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
    std::uniform_real_distribution<double> u(-scale, scale);
    auto w = weight(l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    auto b = bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = u(rng);
  }
}

Eigen::Map<Matrix> Mlp::weight(std::size_t l) {
  return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]};
}

Eigen::Map<const Matrix> Mlp::weight(std::size_t l) const {
  return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]};
}

Eigen::Map<Vector> Mlp::bias(std::size_t l) {
  return {params_.data() + offsets_[l] + static_cast<std::size_t>(dims_[l + 1]) * dims_[l], dims_[l + 1]};
}

Eigen::Map<const Vector> Mlp::bias(std::size_t l) const {
  return {params_.data() + offsets_[l] + static_cast<std::size_t>(dims_[l + 1]) * dims_[l], dims_[l + 1]};
}

Matrix Mlp::forward(const Matrix& input, Cache* cache) const {
  if (input.rows() != input_dim()) throw ShapeError("forward: input dimension mismatch");
  if (cache) {
    cache->activations.assign(1, input);
    cache->pre.clear();
  }
  Matrix a = input;
  for (std::size_t l = 0; l < n_layers(); ++l) {
    Matrix z = weight(l) * a;
    z.colwise() += bias(l);
    const bool last = l + 1 == n_layers();
    if (!last) {
      a = z.cwiseMax(0.0);
    } else if (out_ == OutputActivation::TanhScaled) {
      const Vector half = (hi_ - lo_) / 2.0;
      a = ((z.array().tanh() + 1.0).colwise() * half.array()).colwise() + lo_.array();
    } else {
      a = z;
    }
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->activations.push_back(a);
    }
  }
  return a;
}

Vector Mlp::forward(const Vector& input) const {
  return forward(Matrix(input)).col(0);
}

Mlp::Gradients Mlp::backward(const Cache& cache, const Matrix& output_gradient) const {
  if (cache.pre.size() != n_layers() || cache.activations.size() != n_layers() + 1)
    throw ShapeError("backward: cache does not match network depth");
  const auto batch = cache.activations[0].cols();
  if (output_gradient.rows() != output_dim() || output_gradient.cols() != batch)
    throw ShapeError("backward: output gradient shape mismatch");

  Gradients g{Vector::Zero(params_.size()), {}};
  Matrix dz;
  if (out_ == OutputActivation::TanhScaled) {
    const Vector half = (hi_ - lo_) / 2.0;
    const Matrix th = cache.pre.back().array().tanh();
    dz = (output_gradient.array() * (1.0 - th.array().square())).colwise() * half.array();
  } else {
    dz = output_gradient;
  }

  for (std::size_t l = n_layers(); l-- > 0;) {
    const auto& a_in = cache.activations[l];
    Eigen::Map<Matrix> dw(g.params.data() + offsets_[l], dims_[l + 1], dims_[l]);
    Eigen::Map<Vector> db(g.params.data() + offsets_[l] + static_cast<std::size_t>(dims_[l + 1]) * dims_[l],
                          dims_[l + 1]);
    dw.noalias() = dz * a_in.transpose();
    db = dz.rowwise().sum();
    Matrix da = weight(l).transpose() * dz;
    if (l == 0) {
      g.input = std::move(da);
    } else {
      dz = da.array() * (cache.pre[l - 1].array() > 0.0).cast<double>();
    }
  }
  return g;
}

bool Mlp::operator==(const Mlp& other) const {
  return dims_ == other.dims_ && out_ == other.out_ && params_ == other.params_ &&
         lo_.size() == other.lo_.size() && lo_ == other.lo_ && hi_ == other.hi_;
}

AdamState AdamState::for_params(const Vector& params, double alpha) {
  AdamState s;
  s.m = Vector::Zero(params.size());
  s.v = Vector::Zero(params.size());
  s.alpha = alpha;
  return s;
}

void adam_step(AdamState& s, Vector& params, const Vector& grads) {
  if (grads.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw ShapeError("adam_step: shape mismatch");
  if (!grads.allFinite()) throw std::domain_error("adam_step: non-finite gradient");
  ++s.t;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  params.array() -= s.alpha * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

// Checkpoint layout (little-endian): magic, u32 version, u64 meta length,
// meta bytes, u32 network count, then per network: u32 depth, u32 dims[],
// u8 activation, [f64 lo[], f64 hi[]], u64 n, f64 params[n], u8 has_adam,
// [i64 t, f64 alpha, beta1, beta2, eps, f64 m[n], f64 v[n]].
namespace {

template <typename T>
void put(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_doubles(std::ofstream& out, const Vector& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

template <typename T>
T get(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

Vector get_doubles(std::ifstream& in, std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (!ckpt.adam.empty() && ckpt.adam.size() != ckpt.nets.size())
    throw ShapeError("checkpoint: adam states must match networks");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.meta.size());
  out.write(ckpt.meta.data(), static_cast<std::streamsize>(ckpt.meta.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.nets.size()));
  for (std::size_t k = 0; k < ckpt.nets.size(); ++k) {
    const auto& net = ckpt.nets[k];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layer_dims().size()));
    for (int d : net.layer_dims()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(net.output_activation()));
    if (net.output_activation() == OutputActivation::TanhScaled) {
      put_doubles(out, net.lower());
      put_doubles(out, net.upper());
    }
    put<std::uint64_t>(out, static_cast<std::uint64_t>(net.params().size()));
    put_doubles(out, net.params());
    const bool has_adam = !ckpt.adam.empty();
    put<std::uint8_t>(out, has_adam ? 1 : 0);
    if (has_adam) {
      const auto& a = ckpt.adam[k];
      put<std::int64_t>(out, a.t);
      put(out, a.alpha);
      put(out, a.beta1);
      put(out, a.beta2);
      put(out, a.eps);
      put_doubles(out, a.m);
      put_doubles(out, a.v);
    }
  }
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  const auto meta_len = get<std::uint64_t>(in);
  ckpt.meta.resize(meta_len);
  in.read(ckpt.meta.data(), static_cast<std::streamsize>(meta_len));
  const auto n_nets = get<std::uint32_t>(in);
  bool any_adam = false;
  for (std::uint32_t k = 0; k < n_nets; ++k) {
    const auto depth = get<std::uint32_t>(in);
    std::vector<int> dims(depth);
    for (auto& d : dims) d = static_cast<int>(get<std::uint32_t>(in));
    const auto act = static_cast<OutputActivation>(get<std::uint8_t>(in));
    Mlp net;
    if (act == OutputActivation::TanhScaled) {
      const auto out_dim = static_cast<std::size_t>(dims.back());
      Vector lo = get_doubles(in, out_dim);
      Vector hi = get_doubles(in, out_dim);
      net = Mlp(dims, std::move(lo), std::move(hi));
    } else {
      net = Mlp(dims);
    }
    const auto n = get<std::uint64_t>(in);
    if (n != static_cast<std::uint64_t>(net.params().size()))
      throw std::runtime_error(path.string() + ": parameter count does not match layer dims");
    net.params() = get_doubles(in, n);
    if (get<std::uint8_t>(in)) {
      any_adam = true;
      AdamState a;
      a.t = get<std::int64_t>(in);
      a.alpha = get<double>(in);
      a.beta1 = get<double>(in);
      a.beta2 = get<double>(in);
      a.eps = get<double>(in);
      a.m = get_doubles(in, n);
      a.v = get_doubles(in, n);
      ckpt.adam.push_back(std::move(a));
    }
    ckpt.nets.push_back(std::move(net));
  }
  if (any_adam && ckpt.adam.size() != ckpt.nets.size())
    throw std::runtime_error(path.string() + ": inconsistent optimizer state");
  return ckpt;
}

}  // namespace tscopf::nn
