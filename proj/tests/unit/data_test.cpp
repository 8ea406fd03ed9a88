#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mutexmatch/error.hpp"
#include "mutexmatch/data.hpp"

namespace mm = mutexmatch;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("mutexmatch_data_test_" + name);
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

double nearest_centroid_accuracy(const mm::Dataset& ds) {
  std::vector<std::vector<double>> centroid(ds.classes, std::vector<double>(ds.dim(), 0.0));
  std::vector<std::size_t> count(ds.classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    ++count[c];
    for (std::size_t j = 0; j < ds.dim(); ++j) centroid[c][j] += ds.features.row(i)[j];
  }
  for (std::size_t c = 0; c < ds.classes; ++c) {
    for (double& v : centroid[c]) v /= static_cast<double>(count[c]);
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < ds.classes; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < ds.dim(); ++j) d += std::pow(ds.features.row(i)[j] - centroid[c][j], 2);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    hits += static_cast<int>(best) == ds.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

mm::Dataset blobs() { return mm::make_gaussian_blobs(10, 60, 16, 4.0, 3); }

}  // namespace

TEST(Blobs, SizeAndDeterminism) {
  const auto a = mm::make_gaussian_blobs(10, 500, 16, 4.0, 1);
  EXPECT_EQ(a.size(), 5000u);
  EXPECT_EQ(a.dim(), 16u);
  EXPECT_EQ(a.feature_std.size(), 16u);
  const auto b = mm::make_gaussian_blobs(10, 500, 16, 4.0, 1);
  EXPECT_EQ(a.features.values, b.features.values);
  EXPECT_EQ(a.labels, b.labels);
  const auto c = mm::make_gaussian_blobs(10, 500, 16, 4.0, 2);
  EXPECT_NE(a.features.values, c.features.values);
  EXPECT_THROW(mm::make_gaussian_blobs(1, 10, 16, 4.0, 1), mm::ConfigError);
}

TEST(Blobs, LargeSeparationIsNearestCentroidSeparable) {
  EXPECT_EQ(nearest_centroid_accuracy(mm::make_gaussian_blobs(10, 100, 16, 40.0, 4)), 1.0);
  // More classes than dimensions takes the rejection-sampled branch.
  EXPECT_EQ(nearest_centroid_accuracy(mm::make_gaussian_blobs(6, 100, 3, 40.0, 4)), 1.0);
  EXPECT_LT(nearest_centroid_accuracy(mm::make_gaussian_blobs(10, 100, 16, 1.0, 4)), 0.9);
}

TEST(Rings, RadiiAndSize) {
  const auto ds = mm::make_rings(4, 250, 0.0, 9);
  EXPECT_EQ(ds.size(), 1000u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = ds.features.row(i);
    EXPECT_NEAR(std::hypot(r[0], r[1]), ds.labels[i] + 1.0, 1e-12);
  }
  EXPECT_THROW(mm::make_rings(4, 10, -1.0, 0), mm::ConfigError);
}

TEST(Csv, ParsesLabeledAndUnlabeledRows) {
  const auto p = write_file("basic.csv", "2,0.1,0.2\n-1,0.3,0.4");
  const auto ds = mm::load_csv(p.string(), false);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{2, mm::kUnlabeled}));
  EXPECT_EQ(ds.classes, 3u);
  EXPECT_EQ(ds.features.values, (std::vector<double>{0.1, 0.2, 0.3, 0.4}));
}

TEST(Csv, HeaderIsSkipped) {
  const auto p = write_file("header.csv", "label,a,b\n0,1,2\n1,3,4\n");
  EXPECT_EQ(mm::load_csv(p.string(), true).size(), 2u);
}

TEST(Csv, ErrorsNameTheLine) {
  EXPECT_THROW(mm::load_csv(write_file("empty.csv", "").string(), false), mm::DataError);
  try {
    mm::load_csv(write_file("ragged.csv", "0,1,2\n1,3\n").string(), false);
    FAIL();
  } catch (const mm::DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  try {
    mm::load_csv(write_file("text.csv", "0,1,2\n1,3,x\n").string(), false);
    FAIL();
  } catch (const mm::DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(mm::load_csv("/nonexistent/file.csv", false), mm::DataError);
}

TEST(Csv, RoundTrip) {
  const auto ds = blobs();
  const auto p = fs::temp_directory_path() / "mutexmatch_data_test_roundtrip.csv";
  mm::save_csv(p.string(), ds);
  const auto back = mm::load_csv(p.string(), false, ds.classes);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.features.values, ds.features.values);
  EXPECT_EQ(mm::dataset_fingerprint(back), mm::dataset_fingerprint(ds));
}

TEST(Split, CountsAndPartition) {
  const auto ds = blobs();
  mm::SplitSpec spec;
  spec.labels_per_class = 4;
  spec.seed = 5;
  spec.eval_fraction = 0.2;
  spec.unlabeled_includes_labeled = false;
  const auto split = mm::make_split(ds, spec);
  EXPECT_EQ(split.labeled.labels.size(), 40u);
  std::vector<int> per_class(10, 0);
  for (int y : split.labeled.labels) ++per_class[static_cast<std::size_t>(y)];
  for (int n : per_class) EXPECT_EQ(n, 4);

  std::multiset<std::size_t> all;
  for (const auto* v : {&split.indices.labeled, &split.indices.unlabeled, &split.indices.eval}) {
    all.insert(v->begin(), v->end());
  }
  EXPECT_EQ(all.size(), ds.size());
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), ds.size());
  EXPECT_EQ(split.eval.labels.size(), 120u);
  EXPECT_EQ(split.unlabeled.features.rows, split.hidden.labels.size());
}

TEST(Split, UnlabeledPoolIncludesLabeledByDefault) {
  const auto ds = blobs();
  const auto split = mm::make_split(ds, mm::SplitSpec{});
  const std::set<std::size_t> pool(split.indices.unlabeled.begin(), split.indices.unlabeled.end());
  for (std::size_t i : split.indices.labeled) EXPECT_TRUE(pool.count(i));
  for (std::size_t i : split.indices.eval) EXPECT_FALSE(pool.count(i));
}

TEST(Split, StandardisedWithTrainingStatistics) {
  const auto split = mm::make_split(blobs(), mm::SplitSpec{});
  const auto& u = split.unlabeled.features;
  for (std::size_t j = 0; j < u.cols; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < u.rows; ++i) m += u.row(i)[j];
    m /= static_cast<double>(u.rows);
    for (std::size_t i = 0; i < u.rows; ++i) v += std::pow(u.row(i)[j] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(v / static_cast<double>(u.rows)), 1.0, 1e-9);
  }
}

TEST(Split, SeedsAndErrors) {
  const auto ds = blobs();
  mm::SplitSpec a;
  a.seed = 1;
  mm::SplitSpec b = a;
  b.seed = 2;
  EXPECT_EQ(mm::make_split(ds, a).indices.labeled, mm::make_split(ds, a).indices.labeled);
  EXPECT_NE(mm::make_split(ds, a).indices.labeled, mm::make_split(ds, b).indices.labeled);
  mm::SplitSpec zero = a;
  zero.labels_per_class = 0;
  EXPECT_THROW(mm::make_split(ds, zero), mm::ConfigError);
  mm::SplitSpec huge = a;
  huge.labels_per_class = 1000;
  EXPECT_THROW(mm::make_split(ds, huge), mm::DataError);
}

TEST(Split, ManifestListsEverySubset) {
  const auto split = mm::make_split(blobs(), mm::SplitSpec{});
  const std::string text = mm::split_manifest(split.indices);
  EXPECT_NE(text.find("labeled"), std::string::npos);
  EXPECT_NE(text.find("unlabeled"), std::string::npos);
  EXPECT_NE(text.find("eval"), std::string::npos);
}

class Batches : public ::testing::Test {
 protected:
  Batches() : split(mm::make_split(blobs(), mm::SplitSpec{})) {}

  mm::BatchIterator iterator(mm::RngStreams& rng, std::size_t b, std::size_t mu) {
    return mm::BatchIterator(split.labeled, split.unlabeled, b, mu, mm::AugmentPolicy::weak_default(),
                             mm::AugmentPolicy::strong_default(), split.feature_std, split.image, rng);
  }

  mm::Split split;
};

TEST_F(Batches, Shapes) {
  mm::RngStreams rng(0);
  auto it = iterator(rng, 64, 7);
  const auto batch = it.next();
  EXPECT_EQ(batch.labeled_weak.rows() + batch.unlabeled_weak.rows(), 512u);
  EXPECT_EQ(batch.labels.size(), 64u);
  EXPECT_EQ(batch.unlabeled_strong.rows(), 448u);
  EXPECT_EQ(batch.unlabeled_weak.cols(), 16u);
}

TEST_F(Batches, EpochCoversThePool) {
  mm::RngStreams rng(1);
  auto it = iterator(rng, 8, 7);
  const std::size_t n = split.unlabeled.features.rows;
  std::set<std::size_t> seen;
  for (std::size_t drawn = 0; drawn < n; drawn += 56) {
    it.next();
    seen.insert(it.last_unlabeled().begin(), it.last_unlabeled().end());
  }
  EXPECT_EQ(seen.size(), n);
}

TEST_F(Batches, Deterministic) {
  mm::RngStreams r1(4), r2(4);
  auto a = iterator(r1, 16, 3);
  auto b = iterator(r2, 16, 3);
  for (int i = 0; i < 5; ++i) {
    const auto x = a.next();
    const auto y = b.next();
    EXPECT_EQ(std::vector<double>(x.unlabeled_strong.data().begin(), x.unlabeled_strong.data().end()),
              std::vector<double>(y.unlabeled_strong.data().begin(), y.unlabeled_strong.data().end()));
    EXPECT_EQ(x.labels, y.labels);
  }
}
