#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vdn/navgraph.hpp"
#include "vdn/text.hpp"

namespace vdn {

// Success radius and nDTW distance threshold, meters. Success is inclusive.
inline constexpr double kSuccessRadius = 3.0;

enum class DistanceMode { Euclidean, Geodesic };

// d(start, target) - d(final, target).
double goal_progress(const NavGraph& graph, const NodeId& start, const NodeId& final_node,
                     const NodeId& target, DistanceMode mode = DistanceMode::Euclidean);

bool success(const NavGraph& graph, const NodeId& final_node, const NodeId& target);
double success_rate(std::span<const bool> outcomes);

// S * l / max(p, l). Throws InvalidLength for l <= 0 or p < 0.
double spl(bool succeeded, double shortest_length, double taken_length);

// Dynamic time warping with Euclidean point cost.
double dtw(std::span<const Vec3> reference, std::span<const Vec3> query);
// exp(-DTW / (|R| * threshold)).
double ndtw(std::span<const Vec3> reference, std::span<const Vec3> query,
            double threshold = kSuccessRadius);

std::vector<Vec3> positions(const NavGraph& graph, const std::vector<NodeId>& walk);

struct EpisodeMetrics {
  std::string episode_id;
  double goal_progress = 0.0;
  bool success = false;
  double spl = 0.0;
  double ndtw = 0.0;
  double shortest_length = 0.0;
  double path_length = 0.0;
  int actions = 0;
  int questions = 0;

  bool operator==(const EpisodeMetrics&) const = default;
};

struct EpisodeFailure {
  std::string episode_id;
  std::string error;
  bool operator==(const EpisodeFailure&) const = default;
};

// Per-episode rows plus failures. Aggregates are computed over rows in a
// canonical order, so merging partial reports in any grouping gives the same
// numbers bit for bit.
class NavMetricsReport {
 public:
  void add(EpisodeMetrics m);
  void add_failure(EpisodeFailure f);
  void merge(const NavMetricsReport& other);

  const std::vector<EpisodeMetrics>& episodes() const { return episodes_; }
  const std::vector<EpisodeFailure>& failures() const { return failures_; }

  double goal_progress() const;
  double success_rate() const;
  double spl() const;
  double ndtw() const;

  nlohmann::json to_json() const;
  std::string to_csv() const;

  bool operator==(const NavMetricsReport&) const = default;

 private:
  void canonicalize();
  double mean_of(double EpisodeMetrics::*field) const;

  std::vector<EpisodeMetrics> episodes_;
  std::vector<EpisodeFailure> failures_;
};

double bleu(const Tokens& candidate, const Tokens& reference, int max_n);
// Corpus-level BLEU: clipped counts and lengths pooled before combining.
double corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                   int max_n);

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.2);

// tf-idf n-gram cosine similarity (n = 1..4), averaged and scaled by 10.
// Document frequencies come from the reference corpus given at construction.
class CiderScorer {
 public:
  explicit CiderScorer(const std::vector<Tokens>& reference_corpus);
  double score(const Tokens& candidate, const Tokens& reference) const;
  double document_frequency(const Tokens& ngram) const;
  std::size_t corpus_size() const { return corpus_size_; }

 private:
  std::vector<std::map<Tokens, int>> df_;  // per n
  std::size_t corpus_size_;
};

double cider(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

struct TextMetricsReport {
  std::array<double, 4> bleu{};  // BLEU-1..4
  double rouge_l = 0.0;
  double cider = 0.0;
  std::size_t documents = 0;

  nlohmann::json to_json() const;
};

TextMetricsReport evaluate_text(const std::vector<Tokens>& candidates,
                                const std::vector<Tokens>& references);

}  // namespace vdn
