#include "sheafalign/datagen.hpp"

#include <cmath>
#include <string>

#include "sheafalign/binary_io.hpp"
#include "sheafalign/error.hpp"
#include "sheafalign/rng.hpp"

namespace sheafalign {

namespace {

constexpr std::string_view kMagic("SHAF1\0", 6);

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Gram-Schmidt on the rows (or columns, whichever are fewer) of a Gaussian
// draw: a random semi-orthogonal map, so no view is ill-conditioned.
Tensor random_orthogonal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool by_rows = rows <= cols;
  const std::size_t count = by_rows ? rows : cols;
  const std::size_t len = by_rows ? cols : rows;
  std::vector<std::vector<double>> v(count, std::vector<double>(len));
  for (std::size_t k = 0; k < count; ++k) {
    for (;;) {
      for (double& x : v[k]) x = normal(rng);
      for (std::size_t p = 0; p < k; ++p) {
        double d = 0.0;
        for (std::size_t t = 0; t < len; ++t) d += v[k][t] * v[p][t];
        for (std::size_t t = 0; t < len; ++t) v[k][t] -= d * v[p][t];
      }
      double norm = 0.0;
      for (double x : v[k]) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-8) continue;
      for (double& x : v[k]) x /= norm;
      break;
    }
  }
  Tensor m(rows, cols);
  for (std::size_t k = 0; k < count; ++k)
    for (std::size_t t = 0; t < len; ++t) (by_rows ? m(k, t) : m(t, k)) = v[k][t];
  return m;
}

}  // namespace

MultiViewDataset MultiViewDataset::select(const std::vector<std::size_t>& rows) const {
  MultiViewDataset out;
  out.num_classes = num_classes;
  for (const auto& v : views) out.views.push_back(gather_rows(v, rows));
  if (!labels.empty())
    for (auto r : rows) out.labels.push_back(labels.at(r));
  out.mask = mask.select(rows);
  return out;
}

MultiViewDataset generate_multiview(std::uint32_t num_classes, std::size_t samples_per_class,
                                    const RedundancyControl& ctrl, std::size_t n_views, std::uint64_t seed) {
  if (num_classes == 0 || samples_per_class == 0 || n_views == 0) {
    throw ContractError("generate_multiview: class, sample and view counts must be >= 1");
  }
  if (ctrl.noise_sigma < 0.0) throw ContractError("noise_sigma must be >= 0");
  const std::size_t latent = ctrl.latent_dim();
  const std::size_t obs = ctrl.observation_dim();
  if (latent == 0) throw ContractError("shared_dim + unique_dim must be >= 1");
  if (ctrl.identity_transforms && obs != latent) {
    throw ContractError("identity transforms need obs_dim == shared_dim + unique_dim");
  }
  const std::size_t n = static_cast<std::size_t>(num_classes) * samples_per_class;
  std::normal_distribution<double> normal(0.0, 1.0);

  Tensor centers(num_classes, ctrl.shared_dim);
  {
    Rng rng = make_rng(seed, "data.centers");
    for (double& v : centers.data()) v = ctrl.class_separation * normal(rng);
  }

  // Shared latent: identical across views for a given sample.
  Tensor shared(n, ctrl.shared_dim);
  {
    Rng rng = make_rng(seed, "data.shared");
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t c = r / samples_per_class;
      for (std::size_t k = 0; k < ctrl.shared_dim; ++k) shared(r, k) = centers(c, k) + normal(rng);
    }
  }

  MultiViewDataset ds;
  ds.num_classes = num_classes;
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) ds.labels[r] = static_cast<std::uint32_t>(r / samples_per_class);
  ds.mask = PresenceMask(n, n_views, true);

  for (std::size_t v = 0; v < n_views; ++v) {
    Tensor mix = Tensor::identity(latent);
    if (!ctrl.identity_transforms) {
      Rng rng = make_rng(seed, "data.transform", v);
      mix = random_orthogonal(latent, obs, rng);
    }
    Tensor z(n, latent);
    Rng urng = make_rng(seed, "data.unique", v);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < ctrl.shared_dim; ++k) z(r, k) = shared(r, k);
      for (std::size_t k = 0; k < ctrl.unique_dim; ++k) z(r, ctrl.shared_dim + k) = normal(urng);
    }
    Tensor x = matmul(z, mix);
    Rng nrng = make_rng(seed, "data.noise", v);
    for (double& val : x.data()) {
      const double eps = normal(nrng);
      val = to_f32(val + ctrl.noise_sigma * eps);
    }
    ds.views.push_back(std::move(x));
  }
  return ds;
}

std::pair<MultiViewDataset, MultiViewDataset> split_per_class(const MultiViewDataset& ds,
                                                              std::size_t train_per_class) {
  if (!ds.labeled()) throw ContractError("split_per_class needs a labeled dataset");
  std::vector<std::size_t> seen(ds.num_classes, 0);
  std::vector<std::size_t> first, second;
  for (std::size_t r = 0; r < ds.sample_count(); ++r) {
    auto& count = seen[ds.labels[r]];
    (count < train_per_class ? first : second).push_back(r);
    ++count;
  }
  return {ds.select(first), ds.select(second)};
}

MultiViewDataset apply_presence_dropout(const MultiViewDataset& ds, double p_drop, std::uint64_t seed) {
  if (!(p_drop >= 0.0 && p_drop < 1.0)) {
    throw ContractError("p_drop must lie in [0, 1), got " + std::to_string(p_drop));
  }
  MultiViewDataset out = ds;
  if (p_drop == 0.0) return out;
  const std::size_t nodes = ds.node_count();
  std::bernoulli_distribution drop(p_drop);
  for (std::size_t n = 0; n < ds.sample_count(); ++n) {
    Rng rng = make_rng(seed, "data.dropout", n);
    if (ds.mask.present_count(n) == 0) continue;
    for (;;) {
      std::size_t present = 0;
      for (std::size_t i = 0; i < nodes; ++i) {
        const bool keep = ds.mask(n, i) && !drop(rng);
        out.mask.set(n, i, keep);
        present += keep ? 1 : 0;
      }
      if (present >= 1) break;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_dataset(const MultiViewDataset& ds) {
  const std::size_t n = ds.sample_count();
  const std::size_t nodes = ds.node_count();
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(nodes));
  w.u64(n);
  w.u32(ds.num_classes);
  for (std::size_t i = 0; i < nodes; ++i) {
    const Tensor& v = ds.views[i];
    if (v.rows() != n) throw DimensionError("view " + std::to_string(i) + " has " + std::to_string(v.rows()) + " rows");
    w.u32(static_cast<std::uint32_t>(i));
    w.u32(static_cast<std::uint32_t>(v.cols()));
    for (double x : v.data()) w.f32(static_cast<float>(x));
  }
  const std::size_t bits = n * nodes;
  std::vector<std::uint8_t> packed((bits + 7) / 8, 0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < nodes; ++i)
      if (ds.mask(s, i)) {
        const std::size_t k = s * nodes + i;
        packed[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
      }
  for (auto b : packed) w.u8(b);
  if (ds.num_classes > 0) {
    if (ds.labels.size() != n) throw DimensionError("label count does not match sample count");
    for (auto l : ds.labels) w.u32(l);
  }
  return w.take();
}

MultiViewDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.section("magic");
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) r.fail_at(0, "bad magic");

  r.section("header");
  const auto version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    r.fail_at(version_at, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t nodes = r.u32();
  const std::uint64_t n = r.u64();
  MultiViewDataset ds;
  ds.num_classes = r.u32();

  for (std::uint32_t i = 0; i < nodes; ++i) {
    r.section("node " + std::to_string(i));
    const auto id_at = r.offset();
    const std::uint32_t id = r.u32();
    if (id != i) r.fail_at(id_at, "expected node id " + std::to_string(i) + ", found " + std::to_string(id));
    const std::uint32_t dim = r.u32();
    r.need(static_cast<std::size_t>(n * dim * 4));
    Tensor v(n, dim);
    for (double& x : v.data()) x = static_cast<double>(r.f32());
    ds.views.push_back(std::move(v));
  }

  r.section("mask");
  const std::size_t bits = static_cast<std::size_t>(n) * nodes;
  r.need((bits + 7) / 8);
  ds.mask = PresenceMask(n, nodes, false);
  std::uint8_t byte = 0;
  for (std::size_t k = 0; k < bits; ++k) {
    if (k % 8 == 0) byte = r.u8();
    ds.mask.set(k / nodes, k % nodes, (byte >> (k % 8)) & 1u);
  }

  if (ds.num_classes > 0) {
    r.section("labels");
    r.need(static_cast<std::size_t>(n * 4));
    ds.labels.resize(n);
    for (auto& l : ds.labels) {
      const auto at = r.offset();
      l = r.u32();
      if (l >= ds.num_classes) r.fail_at(at, "label " + std::to_string(l) + " out of range");
    }
  }
  r.section("trailer");
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " unexpected trailing bytes");
  return ds;
}

void write_dataset(const MultiViewDataset& ds, const std::filesystem::path& path) {
  write_file_bytes(path, encode_dataset(ds));
}

MultiViewDataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

}  // namespace sheafalign
