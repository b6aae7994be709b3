#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "sheafalign/binary_io.hpp"
#include "sheafalign/datagen.hpp"
#include "sheafalign/error.hpp"

using namespace sheafalign;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("sheafalign_test_" + name); }

double correlation(const Tensor& a, std::size_t ca, const Tensor& b, std::size_t cb) {
  const double n = static_cast<double>(a.rows());
  double ma = 0, mb = 0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    ma += a(r, ca);
    mb += b(r, cb);
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    sab += (a(r, ca) - ma) * (b(r, cb) - mb);
    saa += (a(r, ca) - ma) * (a(r, ca) - ma);
    sbb += (b(r, cb) - mb) * (b(r, cb) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("full redundancy gives identical views") {
  RedundancyControl c;
  c.shared_dim = 5;
  c.unique_dim = 0;
  c.noise_sigma = 0;
  c.identity_transforms = true;
  const MultiViewDataset ds = generate_multiview(3, 20, c, 3, 7);
  CHECK(ds.views[0] == ds.views[1]);
  CHECK(ds.views[1] == ds.views[2]);
}

TEST_CASE("without shared factors the views are uncorrelated") {
  RedundancyControl c;
  c.shared_dim = 0;
  c.unique_dim = 4;
  c.noise_sigma = 0.1;
  const MultiViewDataset ds = generate_multiview(1, 1000, c, 2, 3);
  double worst = 0.0;
  for (std::size_t a = 0; a < ds.views[0].cols(); ++a)
    for (std::size_t b = 0; b < ds.views[1].cols(); ++b)
      worst = std::max(worst, std::abs(correlation(ds.views[0], a, ds.views[1], b)));
  CHECK(worst <= 0.1);
}

TEST_CASE("shapes and class balance") {
  RedundancyControl c;
  c.obs_dim = 20;
  const MultiViewDataset ds = generate_multiview(3, 200, c, 3, 1);
  CHECK(ds.sample_count() == 600);
  for (const auto& v : ds.views) {
    CHECK(v.rows() == 600);
    CHECK(v.cols() == 20);
  }
  std::vector<std::size_t> counts(3, 0);
  for (auto l : ds.labels) ++counts.at(l);
  CHECK(counts == std::vector<std::size_t>{200, 200, 200});
  CHECK(ds.mask.absent_cells() == 0);

  const auto [train, test] = split_per_class(ds, 50);
  CHECK(train.sample_count() == 150);
  CHECK(test.sample_count() == 450);
  CHECK(train.labels[50] == 1);
}

TEST_CASE("generation is deterministic per seed") {
  const RedundancyControl c;
  CHECK(generate_multiview(2, 30, c, 3, 5) == generate_multiview(2, 30, c, 3, 5));
  CHECK_FALSE(generate_multiview(2, 30, c, 3, 5) == generate_multiview(2, 30, c, 3, 6));
}

TEST_CASE("presence dropout") {
  const MultiViewDataset ds = generate_multiview(2, 1667, RedundancyControl{}, 3, 2);  // 10002 cells
  CHECK(apply_presence_dropout(ds, 0.0, 1).mask == ds.mask);

  const MultiViewDataset d = apply_presence_dropout(ds, 0.1, 4);
  const double frac = static_cast<double>(d.mask.absent_cells()) / (3.0 * ds.sample_count());
  CHECK(std::abs(frac - 0.1) <= 0.01);
  for (std::size_t n = 0; n < d.sample_count(); ++n) CHECK(d.mask.present_count(n) >= 1);

  CHECK(apply_presence_dropout(ds, 0.5, 9).mask == apply_presence_dropout(ds, 0.5, 9).mask);
  CHECK_FALSE(apply_presence_dropout(ds, 0.5, 9).mask == apply_presence_dropout(ds, 0.5, 10).mask);
}

TEST_CASE("dataset file round-trip") {
  MultiViewDataset ds = apply_presence_dropout(generate_multiview(3, 7, RedundancyControl{}, 3, 8), 0.3, 1);
  const fs::path p = temp_path("roundtrip.shaf");
  write_dataset(ds, p);
  CHECK(read_dataset(p) == ds);

  MultiViewDataset unlabeled = ds;
  unlabeled.num_classes = 0;
  unlabeled.labels.clear();
  CHECK(decode_dataset(encode_dataset(unlabeled)) == unlabeled);

  const fs::path q = temp_path("roundtrip2.shaf");
  write_dataset(generate_multiview(3, 7, RedundancyControl{}, 3, 8), q);
  write_dataset(generate_multiview(3, 7, RedundancyControl{}, 3, 8), p);
  CHECK(read_file_bytes(p) == read_file_bytes(q));
  fs::remove(p);
  fs::remove(q);
}

TEST_CASE("malformed dataset files") {
  const MultiViewDataset ds = generate_multiview(2, 5, RedundancyControl{}, 2, 1);
  const auto good = encode_dataset(ds);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  try {
    (void)decode_dataset(bad_magic);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset == 0);
    CHECK(e.section == "magic");
  }

  // Cut inside the mask: header 26 bytes, two nodes of 8 + 10*12*4 bytes.
  const std::size_t mask_at = 6 + 4 + 4 + 8 + 4 + 2 * (8 + 10 * 12 * 4);
  auto truncated = std::vector<std::uint8_t>(good.begin(), good.begin() + mask_at + 1);
  try {
    (void)decode_dataset(truncated);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.section == "mask");
    CHECK(std::string(e.what()).find("mask") != std::string::npos);
  }

  auto wrong_version = good;
  wrong_version[6] = 9;
  try {
    (void)decode_dataset(wrong_version);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset == 6);
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}
