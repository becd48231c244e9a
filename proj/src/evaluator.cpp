#include "ppmn/evaluator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ppmn/trainer.hpp"

namespace ppmn {

SingleShotSplit build_single_shot(const IdentityDataset& test_set, std::uint64_t seed) {
  SingleShotSplit split;
  Rng rng(mix_seed({seed, 0x9a11ULL}));
  for (std::size_t i = 0; i < test_set.identities.size(); ++i) {
    const Identity& identity = test_set.identities[i];
    std::vector<std::size_t> b_images;
    for (std::size_t j = 0; j < identity.images.size(); ++j) {
      if (identity.images[j].camera == Camera::A) {
        split.probes.push_back({i, j});
      } else {
        b_images.push_back(j);
      }
    }
    if (b_images.empty() || identity.count(Camera::A) == 0) {
      throw DataError("identity '" + identity.id + "' needs images from both cameras for single-shot evaluation");
    }
    split.gallery.push_back({i, b_images[rng.index(b_images.size())]});
  }
  if (split.gallery.empty()) throw DataError("single-shot evaluation on an empty test set");
  return split;
}

CmcCurve cmc_from_scores(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> probe_ids,
                         std::span<const std::size_t> gallery_ids) {
  if (scores.empty() || gallery_ids.empty()) throw std::invalid_argument("CMC needs probes and a gallery");
  if (scores.size() != probe_ids.size()) throw std::invalid_argument("CMC: score rows do not match probes");
  const std::size_t g = gallery_ids.size();
  std::vector<std::size_t> hits(g, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != g) throw std::invalid_argument("CMC: score row length differs from the gallery");
    std::size_t match = g;
    for (std::size_t j = 0; j < g; ++j) {
      if (gallery_ids[j] == probe_ids[i]) {
        match = j;
        break;
      }
    }
    if (match == g) {
      throw DataError("probe identity " + std::to_string(probe_ids[i]) + " is absent from the gallery");
    }
    // Rank = entries strictly better, plus equal ones with a lower index.
    const double target = scores[i][match];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < g; ++j) {
      if (scores[i][j] > target || (scores[i][j] == target && j < match)) ++rank;
    }
    ++hits[rank];
  }
  CmcCurve curve{std::vector<double>(g), scores.size(), g};
  std::size_t cumulative = 0;
  for (std::size_t k = 0; k < g; ++k) {
    cumulative += hits[k];
    curve.ranks[k] = static_cast<double>(cumulative) / static_cast<double>(scores.size());
  }
  return curve;
}

namespace {

CmcCurve curve_for(const std::vector<std::vector<double>>& scores, const SingleShotSplit& split) {
  std::vector<std::size_t> probe_ids, gallery_ids;
  for (const ImageRef& p : split.probes) probe_ids.push_back(p.identity);
  for (const ImageRef& g : split.gallery) gallery_ids.push_back(g.identity);
  return cmc_from_scores(scores, probe_ids, gallery_ids);
}

}  // namespace

CmcCurve cmc_single_shot(const PairScorer& scorer, const SingleShotSplit& split) {
  std::vector<std::vector<double>> scores(split.probes.size(), std::vector<double>(split.gallery.size()));
  for (std::size_t i = 0; i < split.probes.size(); ++i) {
    for (std::size_t j = 0; j < split.gallery.size(); ++j) scores[i][j] = scorer(split.probes[i], split.gallery[j]);
  }
  return curve_for(scores, split);
}

CmcCurve cmc_single_shot(const PpmnModel& model, const IdentityDataset& test_set, const SingleShotSplit& split) {
  if (split.probes.empty() || split.gallery.empty()) throw DataError("CMC needs probes and a gallery");
  std::vector<PairSample> pairs;
  pairs.reserve(split.probes.size() * split.gallery.size());
  for (const ImageRef& probe : split.probes) {
    for (const ImageRef& gallery : split.gallery) pairs.push_back({probe, gallery, probe.identity == gallery.identity});
  }
  const std::vector<double> p = score_pairs(model, test_set, pairs);
  std::vector<std::vector<double>> scores(split.probes.size());
  for (std::size_t i = 0; i < split.probes.size(); ++i) {
    scores[i].assign(p.begin() + static_cast<std::ptrdiff_t>(i * split.gallery.size()),
                     p.begin() + static_cast<std::ptrdiff_t>((i + 1) * split.gallery.size()));
  }
  return curve_for(scores, split);
}

TrialSummary average_trials(std::span<const CmcCurve> curves) {
  if (curves.empty()) throw std::invalid_argument("average_trials: no curves");
  const std::size_t len = curves.front().ranks.size();
  TrialSummary summary{std::vector<double>(len, 0.0), std::vector<double>(len, 0.0), curves.size()};
  for (const CmcCurve& c : curves) {
    if (c.ranks.size() != len) throw std::invalid_argument("average_trials: curves have different lengths");
    for (std::size_t k = 0; k < len; ++k) summary.mean[k] += c.ranks[k];
  }
  const double n = static_cast<double>(curves.size());
  for (double& m : summary.mean) m /= n;
  for (const CmcCurve& c : curves) {
    for (std::size_t k = 0; k < len; ++k) {
      const double d = c.ranks[k] - summary.mean[k];
      summary.stddev[k] += d * d;
    }
  }
  for (double& s : summary.stddev) s = std::sqrt(s / n);
  return summary;
}

namespace {

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

}  // namespace

std::vector<ReportRow> report(std::span<const double> ranks) {
  std::vector<ReportRow> rows;
  for (std::size_t r : {1, 5, 10}) {
    if (r <= ranks.size()) rows.push_back({r, percent(ranks[r - 1])});
  }
  return rows;
}

std::string report_table(std::span<const double> ranks) {
  const auto rows = report(ranks);
  std::ostringstream head, body;
  for (const ReportRow& row : rows) {
    char cell[32];
    std::snprintf(cell, sizeof cell, "%9s", ("r=" + std::to_string(row.rank)).c_str());
    head << cell;
    std::snprintf(cell, sizeof cell, "%9s", row.percent.c_str());
    body << cell;
  }
  return "rank     " + head.str() + "\nCMC (%)  " + body.str() + "\n";
}

void write_cmc_csv(const std::filesystem::path& path, std::span<const double> ranks) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "rank,score\n";
  for (std::size_t k = 0; k < ranks.size(); ++k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", k + 1, ranks[k]);
    out << buf;
  }
}

}  // namespace ppmn
