#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "ppmn/evaluator.hpp"
#include "support.hpp"

using namespace ppmn;
using ppmn::testing::scratch_dir;

namespace {

IdentityDataset two_camera_set(std::size_t n_ids, std::size_t per_camera) {
  IdentityDataset d;
  d.image_size = {2, 2};
  for (std::size_t i = 0; i < n_ids; ++i) {
    Identity id{"id" + std::to_string(i), {}};
    for (Camera cam : {Camera::A, Camera::B}) {
      for (std::size_t k = 0; k < per_camera; ++k) id.images.push_back({cam, Tensor(Shape{1, 3, 2, 2}), ""});
    }
    d.identities.push_back(std::move(id));
  }
  return d;
}

// Independent ranking: sort gallery indices by (score desc, index asc)
// and find the position of the true match.
std::vector<double> brute_force_cmc(const std::vector<std::vector<double>>& scores,
                                    const std::vector<std::size_t>& probe_ids,
                                    const std::vector<std::size_t>& gallery_ids) {
  const std::size_t g = gallery_ids.size();
  std::vector<double> hits(g, 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::vector<std::size_t> order(g);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (scores[i][x] != scores[i][y]) return scores[i][x] > scores[i][y];
      return x < y;
    });
    for (std::size_t pos = 0; pos < g; ++pos) {
      if (gallery_ids[order[pos]] == probe_ids[i]) {
        for (std::size_t k = pos; k < g; ++k) hits[k] += 1.0;
        break;
      }
    }
  }
  for (double& h : hits) h /= static_cast<double>(scores.size());
  return hits;
}

}  // namespace

TEST(SingleShot, OneGalleryImagePerIdentity) {
  const IdentityDataset d = two_camera_set(6, 3);
  const SingleShotSplit split = build_single_shot(d, 1);
  EXPECT_EQ(split.probes.size(), 18u);
  ASSERT_EQ(split.gallery.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(split.gallery[i].identity, i);
    EXPECT_EQ(d.identities[i].images[split.gallery[i].image].camera, Camera::B);
  }
  for (const ImageRef& p : split.probes) EXPECT_EQ(d.identities[p.identity].images[p.image].camera, Camera::A);
}

TEST(SingleShot, GallerySeedIsReproducible) {
  const IdentityDataset d = two_camera_set(8, 4);
  EXPECT_EQ(build_single_shot(d, 3).gallery, build_single_shot(d, 3).gallery);
  bool differs = false;
  for (std::uint64_t s = 4; s < 10 && !differs; ++s) differs = build_single_shot(d, s).gallery != build_single_shot(d, 3).gallery;
  EXPECT_TRUE(differs);
}

TEST(SingleShot, MissingCameraRejected) {
  IdentityDataset d = two_camera_set(3, 1);
  d.identities[1].images.pop_back();
  EXPECT_THROW(build_single_shot(d, 1), DataError);
}

TEST(Cmc, OracleScorerIsPerfect) {
  const SingleShotSplit split = build_single_shot(two_camera_set(10, 2), 1);
  const CmcCurve curve = cmc_single_shot(
      [](ImageRef p, ImageRef g) { return p.identity == g.identity ? 1.0 : 0.0; }, split);
  ASSERT_EQ(curve.ranks.size(), 10u);
  for (double r : curve.ranks) EXPECT_EQ(r, 1.0);
  EXPECT_EQ(curve.gallery_size, 10u);
  EXPECT_EQ(curve.probe_count, 20u);
}

TEST(Cmc, AdversarialScorerIsLast) {
  const SingleShotSplit split = build_single_shot(two_camera_set(10, 1), 1);
  const CmcCurve curve = cmc_single_shot(
      [](ImageRef p, ImageRef g) { return p.identity == g.identity ? 0.0 : 1.0; }, split);
  EXPECT_EQ(curve.ranks.front(), 0.0);
  for (std::size_t k = 0; k + 1 < 10; ++k) EXPECT_EQ(curve.ranks[k], 0.0);
  EXPECT_EQ(curve.ranks.back(), 1.0);
}

TEST(Cmc, AgreesWithBruteForceRanking) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t g = 10;
    std::vector<std::size_t> gallery_ids(g);
    std::iota(gallery_ids.begin(), gallery_ids.end(), std::size_t{0});
    std::vector<std::size_t> probe_ids;
    std::vector<std::vector<double>> scores;
    for (std::size_t i = 0; i < 25; ++i) {
      probe_ids.push_back(rng.index(g));
      std::vector<double> row(g);
      // Coarse values so ties occur.
      for (double& s : row) s = static_cast<double>(rng.index(4)) / 4.0;
      scores.push_back(row);
    }
    const CmcCurve curve = cmc_from_scores(scores, probe_ids, gallery_ids);
    EXPECT_EQ(curve.ranks, brute_force_cmc(scores, probe_ids, gallery_ids)) << "trial " << trial;
  }
}

TEST(Cmc, MonotoneAndEndsAtOne) {
  Rng rng(3);
  std::vector<std::size_t> gallery_ids{0, 1, 2, 3, 4, 5};
  std::vector<std::size_t> probe_ids;
  std::vector<std::vector<double>> scores;
  for (std::size_t i = 0; i < 30; ++i) {
    probe_ids.push_back(i % 6);
    std::vector<double> row(6);
    for (double& s : row) s = rng.uniform();
    scores.push_back(row);
  }
  const CmcCurve curve = cmc_from_scores(scores, probe_ids, gallery_ids);
  EXPECT_TRUE(std::is_sorted(curve.ranks.begin(), curve.ranks.end()));
  EXPECT_EQ(curve.ranks.back(), 1.0);
}

TEST(Cmc, InvariantToGalleryPermutationWithoutTies) {
  const std::vector<std::size_t> gallery_ids{0, 1, 2, 3};
  const std::vector<std::size_t> probe_ids{0, 1, 2, 3, 1};
  const std::vector<std::vector<double>> scores{
      {0.9, 0.1, 0.3, 0.2}, {0.5, 0.4, 0.3, 0.2}, {0.1, 0.2, 0.8, 0.7}, {0.6, 0.3, 0.2, 0.1}, {0.2, 0.9, 0.1, 0.3}};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::size_t> permuted_ids;
  for (std::size_t j : perm) permuted_ids.push_back(gallery_ids[j]);
  std::vector<std::vector<double>> permuted;
  for (const auto& row : scores) {
    std::vector<double> r;
    for (std::size_t j : perm) r.push_back(row[j]);
    permuted.push_back(r);
  }
  EXPECT_EQ(cmc_from_scores(scores, probe_ids, gallery_ids).ranks,
            cmc_from_scores(permuted, probe_ids, permuted_ids).ranks);
}

TEST(Cmc, TiesRankLowerGalleryIndexFirst) {
  const std::vector<std::size_t> gallery_ids{0, 1, 2};
  const std::vector<std::vector<double>> flat{{0.5, 0.5, 0.5}};
  const std::vector<std::size_t> first{0}, last{2};
  EXPECT_EQ(cmc_from_scores(flat, first, gallery_ids).ranks, (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(cmc_from_scores(flat, last, gallery_ids).ranks, (std::vector<double>{0, 0, 1}));
}

TEST(Cmc, ProbeWithoutGalleryMatchRejected) {
  const std::vector<std::size_t> gallery_ids{0, 1};
  const std::vector<std::size_t> probe_ids{5};
  EXPECT_THROW(cmc_from_scores({{0.1, 0.2}}, probe_ids, gallery_ids), DataError);
}

TEST(Trials, IdenticalCurvesHaveZeroSpread) {
  const CmcCurve c{{0.3, 0.6, 1.0}, 3, 3};
  const std::vector<CmcCurve> curves{c, c, c};
  const TrialSummary s = average_trials(curves);
  EXPECT_EQ(s.mean, c.ranks);
  for (double v : s.stddev) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.trials, 3u);
}

TEST(Trials, MeanOfTwoCurves) {
  const std::vector<CmcCurve> curves{{{0.4, 1.0}, 2, 2}, {{0.6, 1.0}, 2, 2}};
  const TrialSummary s = average_trials(curves);
  EXPECT_DOUBLE_EQ(s.mean[0], 0.5);
  EXPECT_DOUBLE_EQ(s.stddev[0], 0.1);
}

TEST(Trials, TenSeededTrialsMatchRecomputation) {
  const IdentityDataset d = two_camera_set(10, 3);
  auto scorer = [](ImageRef p, ImageRef g) {
    return p.identity == g.identity ? 0.6 : static_cast<double>((p.image * 7 + g.image * 3 + g.identity) % 10) / 10.0;
  };
  std::vector<CmcCurve> curves;
  for (std::uint64_t t = 0; t < 10; ++t) curves.push_back(cmc_single_shot(scorer, build_single_shot(d, t)));
  const TrialSummary s = average_trials(curves);
  for (std::size_t k = 0; k < 10; ++k) {
    double sum = 0.0;
    for (const auto& c : curves) sum += c.ranks[k];
    EXPECT_NEAR(s.mean[k], sum / 10.0, 1e-15);
  }
}

TEST(Trials, MixedLengthsRejected) {
  const std::vector<CmcCurve> curves{{{0.4, 1.0}, 2, 2}, {{1.0}, 1, 1}};
  EXPECT_THROW(average_trials(curves), std::invalid_argument);
}

TEST(Report, FormatsTwoDecimalPercentages) {
  std::vector<double> ranks(20, 1.0);
  ranks[0] = 0.855;
  ranks[4] = 0.9;
  ranks[9] = 0.97;
  const auto rows = report(ranks);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rank, 1u);
  EXPECT_EQ(rows[0].percent, "85.50");
  EXPECT_EQ(rows[1].percent, "90.00");
  EXPECT_EQ(rows[2].rank, 10u);
  EXPECT_EQ(rows[2].percent, "97.00");
  const std::string table = report_table(ranks);
  EXPECT_NE(table.find("r=1"), std::string::npos);
  EXPECT_NE(table.find("85.50"), std::string::npos);
}

TEST(Report, SmallGalleryOmitsRankTen) {
  const std::vector<double> ranks{0.2, 0.4, 0.6, 0.8, 1.0};
  const auto rows = report(ranks);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].rank, 5u);
}

TEST(Report, CsvSchema) {
  const auto path = scratch_dir("cmc_csv") / "cmc.csv";
  write_cmc_csv(path, std::vector<double>{0.5, 0.75, 1.0});
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(content, "rank,score\n1,0.500000\n2,0.750000\n3,1.000000\n");
}
