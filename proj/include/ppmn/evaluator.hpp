#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ppmn/data.hpp"
#include "ppmn/model.hpp"

namespace ppmn {

// ranks[k-1]: fraction of probes whose true match is within the top k.
struct CmcCurve {
  std::vector<double> ranks;
  std::size_t probe_count = 0;
  std::size_t gallery_size = 0;
};

struct SingleShotSplit {
  std::vector<ImageRef> probes;   // every camera-A image
  std::vector<ImageRef> gallery;  // one camera-B image per identity, identity order
};

SingleShotSplit build_single_shot(const IdentityDataset& test_set, std::uint64_t seed);

// scores[i][j]: similarity of probe i to gallery entry j. Higher ranks
// first; equal scores rank the lower gallery index first.
CmcCurve cmc_from_scores(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> probe_ids,
                         std::span<const std::size_t> gallery_ids);

// Generic scorer over (probe, gallery) image refs.
using PairScorer = std::function<double(ImageRef probe, ImageRef gallery)>;
CmcCurve cmc_single_shot(const PairScorer& scorer, const SingleShotSplit& split);

// Model-scored CMC; p(same) of forward_pair(probe, gallery).
CmcCurve cmc_single_shot(const PpmnModel& model, const IdentityDataset& test_set, const SingleShotSplit& split);

struct TrialSummary {
  std::vector<double> mean;
  std::vector<double> stddev;  // population standard deviation per rank
  std::size_t trials = 0;
};

TrialSummary average_trials(std::span<const CmcCurve> curves);

// Rank-1/5/10 percentages, two decimals; ranks beyond the gallery omitted.
struct ReportRow {
  std::size_t rank = 0;
  std::string percent;
};
std::vector<ReportRow> report(std::span<const double> ranks);
std::string report_table(std::span<const double> ranks);
// `rank,score` rows for every rank of the curve.
void write_cmc_csv(const std::filesystem::path& path, std::span<const double> ranks);

}  // namespace ppmn
