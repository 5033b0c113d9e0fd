#include "vdn/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "vdn/errors.hpp"

namespace vdn {

using nlohmann::json;

double goal_progress(const NavGraph& graph, const NodeId& start, const NodeId& final_node,
                     const NodeId& target, DistanceMode mode) {
  const auto s = graph.index_of(start);
  const auto f = graph.index_of(final_node);
  const auto t = graph.index_of(target);
  if (mode == DistanceMode::Geodesic) return graph.distance(s, t) - graph.distance(f, t);
  return euclidean(graph.node(s).position, graph.node(t).position) -
         euclidean(graph.node(f).position, graph.node(t).position);
}

bool success(const NavGraph& graph, const NodeId& final_node, const NodeId& target) {
  return euclidean(graph.node(final_node).position, graph.node(target).position) <=
         kSuccessRadius;
}

double success_rate(std::span<const bool> outcomes) {
  if (outcomes.empty()) return 0.0;
  const auto hits = std::count(outcomes.begin(), outcomes.end(), true);
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

double spl(bool succeeded, double shortest_length, double taken_length) {
  if (!(shortest_length > 0.0)) throw InvalidLength("shortest path length must be positive");
  if (taken_length < 0.0) throw InvalidLength("taken path length must be non-negative");
  if (!succeeded) return 0.0;
  return shortest_length / std::max(taken_length, shortest_length);
}

double dtw(std::span<const Vec3> reference, std::span<const Vec3> query) {
  if (reference.empty() || query.empty()) throw EmptyPath("DTW needs two non-empty paths");
  const std::size_t n = reference.size(), m = query.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = euclidean(reference[i - 1], query[j - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double ndtw(std::span<const Vec3> reference, std::span<const Vec3> query, double threshold) {
  const double cost = dtw(reference, query);
  return std::exp(-cost / (static_cast<double>(reference.size()) * threshold));
}

std::vector<Vec3> positions(const NavGraph& graph, const std::vector<NodeId>& walk) {
  std::vector<Vec3> out;
  out.reserve(walk.size());
  for (const auto& id : walk) out.push_back(graph.node(id).position);
  return out;
}

void NavMetricsReport::add(EpisodeMetrics m) {
  episodes_.push_back(std::move(m));
  canonicalize();
}

void NavMetricsReport::add_failure(EpisodeFailure f) {
  failures_.push_back(std::move(f));
  canonicalize();
}

void NavMetricsReport::merge(const NavMetricsReport& other) {
  episodes_.insert(episodes_.end(), other.episodes_.begin(), other.episodes_.end());
  failures_.insert(failures_.end(), other.failures_.begin(), other.failures_.end());
  canonicalize();
}

void NavMetricsReport::canonicalize() {
  auto key = [](const EpisodeMetrics& m) {
    return std::tie(m.episode_id, m.goal_progress, m.success, m.spl, m.ndtw, m.shortest_length,
                    m.path_length, m.actions, m.questions);
  };
  std::sort(episodes_.begin(), episodes_.end(),
            [&](const EpisodeMetrics& a, const EpisodeMetrics& b) { return key(a) < key(b); });
  std::sort(failures_.begin(), failures_.end(), [](const auto& a, const auto& b) {
    return std::tie(a.episode_id, a.error) < std::tie(b.episode_id, b.error);
  });
}

double NavMetricsReport::mean_of(double EpisodeMetrics::*field) const {
  if (episodes_.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : episodes_) total += e.*field;
  return total / static_cast<double>(episodes_.size());
}

double NavMetricsReport::goal_progress() const { return mean_of(&EpisodeMetrics::goal_progress); }
double NavMetricsReport::spl() const { return mean_of(&EpisodeMetrics::spl); }
double NavMetricsReport::ndtw() const { return mean_of(&EpisodeMetrics::ndtw); }

double NavMetricsReport::success_rate() const {
  if (episodes_.empty()) return 0.0;
  double hits = 0.0;
  for (const auto& e : episodes_) hits += e.success ? 1.0 : 0.0;
  return hits / static_cast<double>(episodes_.size());
}

json NavMetricsReport::to_json() const {
  json j;
  j["episodes"] = episodes_.size();
  j["failed"] = failures_.size();
  j["GP"] = goal_progress();
  j["SR"] = success_rate();
  j["SPL"] = spl();
  j["nDTW"] = ndtw();
  json rows = json::array();
  for (const auto& e : episodes_) {
    rows.push_back({{"episode", e.episode_id},
                    {"GP", e.goal_progress},
                    {"success", e.success},
                    {"SPL", e.spl},
                    {"nDTW", e.ndtw},
                    {"shortest_length", e.shortest_length},
                    {"path_length", e.path_length},
                    {"actions", e.actions},
                    {"questions", e.questions}});
  }
  j["per_episode"] = std::move(rows);
  json failures = json::array();
  for (const auto& f : failures_) failures.push_back({{"episode", f.episode_id}, {"error", f.error}});
  j["failures"] = std::move(failures);
  return j;
}

std::string NavMetricsReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "episode,gp,success,spl,ndtw,shortest_length,path_length,actions,questions\n";
  for (const auto& e : episodes_) {
    out << e.episode_id << ',' << e.goal_progress << ',' << (e.success ? 1 : 0) << ',' << e.spl
        << ',' << e.ndtw << ',' << e.shortest_length << ',' << e.path_length << ',' << e.actions
        << ',' << e.questions << '\n';
  }
  return out.str();
}

namespace {

std::map<Tokens, int> ngram_counts(const Tokens& tokens, int n) {
  std::map<Tokens, int> counts;
  const auto len = static_cast<int>(tokens.size());
  for (int i = 0; i + n <= len; ++i) {
    ++counts[Tokens(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

struct BleuStats {
  std::vector<double> matches, totals;
  double candidate_length = 0.0, reference_length = 0.0;
  explicit BleuStats(int n) : matches(static_cast<std::size_t>(n), 0.0), totals(static_cast<std::size_t>(n), 0.0) {}

  void add(const Tokens& candidate, const Tokens& reference) {
    candidate_length += static_cast<double>(candidate.size());
    reference_length += static_cast<double>(reference.size());
    for (std::size_t k = 0; k < matches.size(); ++k) {
      const int n = static_cast<int>(k) + 1;
      const auto cand = ngram_counts(candidate, n);
      const auto ref = ngram_counts(reference, n);
      for (const auto& [gram, count] : cand) {
        const auto it = ref.find(gram);
        if (it != ref.end()) matches[k] += std::min(count, it->second);
        totals[k] += count;
      }
    }
  }

  double score() const {
    double log_sum = 0.0;
    for (std::size_t k = 0; k < matches.size(); ++k) {
      if (totals[k] == 0.0 || matches[k] == 0.0) return 0.0;
      log_sum += std::log(matches[k] / totals[k]);
    }
    const double geo = std::exp(log_sum / static_cast<double>(matches.size()));
    const double bp = candidate_length < reference_length
                          ? std::exp(1.0 - reference_length / candidate_length)
                          : 1.0;
    return bp * geo;
  }
};

void check_order(int max_n) {
  if (max_n < 1 || max_n > 4) throw InvalidConfig("BLEU order must be in 1..4");
}

}  // namespace

double bleu(const Tokens& candidate, const Tokens& reference, int max_n) {
  check_order(max_n);
  if (candidate.empty()) throw EmptyCandidate("BLEU candidate is empty");
  BleuStats stats(max_n);
  stats.add(candidate, reference);
  return stats.score();
}

double corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                   int max_n) {
  check_order(max_n);
  if (candidates.size() != references.size()) {
    throw InvalidConfig("candidate and reference counts differ");
  }
  BleuStats stats(max_n);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].empty()) throw EmptyCandidate("candidate " + std::to_string(i) + " is empty");
    stats.add(candidates[i], references[i]);
  }
  return stats.score();
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (std::size_t i = 1; i <= candidate.size(); ++i) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[reference.size()]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

CiderScorer::CiderScorer(const std::vector<Tokens>& reference_corpus)
    : df_(4), corpus_size_(reference_corpus.size()) {
  if (reference_corpus.empty()) throw EmptyCorpus("CIDEr needs a reference corpus");
  for (const auto& doc : reference_corpus) {
    for (int n = 1; n <= 4; ++n) {
      for (const auto& [gram, _] : ngram_counts(doc, n)) ++df_[static_cast<std::size_t>(n - 1)][gram];
    }
  }
}

double CiderScorer::document_frequency(const Tokens& ngram) const {
  if (ngram.empty() || ngram.size() > 4) return 0.0;
  const auto& table = df_[ngram.size() - 1];
  const auto it = table.find(ngram);
  return it == table.end() ? 0.0 : it->second;
}

double CiderScorer::score(const Tokens& candidate, const Tokens& reference) const {
  const double log_n = std::log(static_cast<double>(corpus_size_));
  double total = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto& table = df_[static_cast<std::size_t>(n - 1)];
    auto weights = [&](const Tokens& doc) {
      std::map<Tokens, double> v;
      for (const auto& [gram, tf] : ngram_counts(doc, n)) {
        const auto it = table.find(gram);
        const double df = std::max(1.0, it == table.end() ? 0.0 : static_cast<double>(it->second));
        v[gram] = tf * (log_n - std::log(df));
      }
      return v;
    };
    const auto vc = weights(candidate);
    const auto vr = weights(reference);
    double dot = 0.0, nc = 0.0, nr = 0.0;
    for (const auto& [gram, w] : vc) {
      nc += w * w;
      const auto it = vr.find(gram);
      if (it != vr.end()) dot += w * it->second;
    }
    for (const auto& [_, w] : vr) nr += w * w;
    if (nc > 0.0 && nr > 0.0) total += dot / std::sqrt(nc * nr);
  }
  return 10.0 * total / 4.0;
}

double cider(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  if (candidates.size() != references.size()) {
    throw InvalidConfig("candidate and reference counts differ");
  }
  const CiderScorer scorer(references);
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += scorer.score(candidates[i], references[i]);
  return total / static_cast<double>(candidates.size());
}

json TextMetricsReport::to_json() const {
  return {{"BLEU-1", bleu[0]}, {"BLEU-2", bleu[1]}, {"BLEU-3", bleu[2]}, {"BLEU-4", bleu[3]},
          {"ROUGE-L", rouge_l}, {"CIDEr", cider},    {"documents", documents}};
}

TextMetricsReport evaluate_text(const std::vector<Tokens>& candidates,
                                const std::vector<Tokens>& references) {
  if (candidates.empty()) throw EmptyCorpus("no candidate/reference pairs");
  TextMetricsReport r;
  r.documents = candidates.size();
  for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] = corpus_bleu(candidates, references, n);
  double rl = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) rl += rouge_l(candidates[i], references[i]);
  r.rouge_l = rl / static_cast<double>(candidates.size());
  r.cider = cider(candidates, references);
  return r;
}

}  // namespace vdn
