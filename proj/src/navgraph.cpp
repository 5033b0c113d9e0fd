#include "vdn/navgraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include "vdn/errors.hpp"
#include "vdn/random.hpp"
#include "vdn/vocabulary.hpp"

namespace vdn {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ShortestPaths {
  std::vector<double> dist;
  std::vector<std::size_t> pred;
};

// Core single-source Dijkstra. `rank` orders nodes lexicographically by id so
// tie-breaking does not depend on insertion order.
ShortestPaths single_source(const std::vector<std::vector<Edge>>& adjacency,
                            const std::vector<std::size_t>& rank, std::size_t source) {
  const std::size_t n = adjacency.size();
  ShortestPaths sp{std::vector<double>(n, kInf), std::vector<std::size_t>(n, n)};
  std::vector<bool> done(n, false);
  using Item = std::pair<double, std::size_t>;  // (dist, rank)
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  std::vector<std::size_t> by_rank(n);
  for (std::size_t i = 0; i < n; ++i) by_rank[rank[i]] = i;

  sp.dist[source] = 0.0;
  queue.emplace(0.0, rank[source]);
  while (!queue.empty()) {
    const auto [d, r] = queue.top();
    queue.pop();
    const std::size_t u = by_rank[r];
    if (done[u]) continue;
    done[u] = true;
    for (const auto& e : adjacency[u]) {
      if (done[e.to]) continue;
      const double nd = d + e.weight;
      if (nd < sp.dist[e.to]) {
        sp.dist[e.to] = nd;
        sp.pred[e.to] = u;
        queue.emplace(nd, rank[e.to]);
      } else if (nd == sp.dist[e.to] && rank[u] < rank[sp.pred[e.to]]) {
        sp.pred[e.to] = u;
      }
    }
  }
  return sp;
}

std::vector<std::size_t> lexicographic_rank(const std::vector<Node>& nodes) {
  std::vector<std::size_t> order(nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return nodes[a].id < nodes[b].id; });
  std::vector<std::size_t> rank(nodes.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

void add_word_vector(std::vector<double>& acc, std::string_view word, double weight) {
  Rng rng(fnv1a(word, fnv1a("word:")));
  const double scale = weight / std::sqrt(static_cast<double>(acc.size()));
  for (auto& a : acc) a += scale * rng.normal();
}

Feature normalized(const std::vector<double>& acc) {
  double norm = 0.0;
  for (double a : acc) norm += a * a;
  norm = std::sqrt(norm);
  Feature out(acc.size(), 0.0f);
  if (norm == 0.0) return out;
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

}  // namespace

double euclidean(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double bearing_deg(const Vec3& from, const Vec3& to) {
  double deg = std::atan2(to.y - from.y, to.x - from.x) * 180.0 / M_PI;
  if (deg < 0.0) deg += 360.0;
  if (deg >= 360.0) deg -= 360.0;
  return deg;
}

int sector_of_bearing(double deg) {
  deg = std::fmod(deg, 360.0);
  if (deg < 0.0) deg += 360.0;
  const int lower = static_cast<int>(std::floor(deg / 60.0)) % kSectors;
  const int upper = (lower + 1) % kSectors;
  const double to_lower = deg - 60.0 * std::floor(deg / 60.0);
  const double to_upper = 60.0 - to_lower;
  if (to_lower < to_upper) return lower;
  if (to_upper < to_lower) return upper;
  return std::min(lower, upper);
}

bool Node::has_object(const std::string& label) const {
  return std::binary_search(objects.begin(), objects.end(), label);
}

Tokens Node::label_tokens() const {
  Tokens out = tokenize(room);
  for (const auto& o : objects) {
    for (auto& t : tokenize(o)) out.push_back(std::move(t));
  }
  return out;
}

NavGraph::NavGraph(std::string env_id, int feature_dim, std::vector<Node> nodes,
                   const std::vector<std::pair<NodeId, NodeId>>& edges)
    : env_id_(std::move(env_id)), feature_dim_(feature_dim), nodes_(std::move(nodes)) {
  if (feature_dim_ <= 0) throw InvalidGraph("feature dimension must be positive");
  if (nodes_.empty()) throw InvalidGraph("graph has no nodes");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    if (n.id.empty()) throw InvalidGraph("empty node id");
    if (!index_.emplace(n.id, i).second) throw InvalidGraph("duplicate node id " + n.id);
    if (!std::isfinite(n.position.x) || !std::isfinite(n.position.y) ||
        !std::isfinite(n.position.z)) {
      throw InvalidGraph("non-finite position for node " + n.id);
    }
    std::sort(n.objects.begin(), n.objects.end());
    n.objects.erase(std::unique(n.objects.begin(), n.objects.end()), n.objects.end());
    const bool recompute = std::all_of(n.panorama.begin(), n.panorama.end(),
                                       [](const Feature& f) { return f.empty(); });
    for (int s = 0; s < kSectors; ++s) {
      if (recompute) {
        n.panorama[s] = featurize_observation(n, s, feature_dim_);
      } else if (static_cast<int>(n.panorama[s].size()) != feature_dim_) {
        throw InvalidGraph("panorama sector " + std::to_string(s) + " of node " + n.id +
                           " has dimension " + std::to_string(n.panorama[s].size()) +
                           ", expected " + std::to_string(feature_dim_));
      }
    }
  }

  adjacency_.assign(nodes_.size(), {});
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [a, b] : edges) {
    const auto ia = index_of(a);
    const auto ib = index_of(b);
    if (ia == ib) throw InvalidGraph("self loop at " + a);
    if (!seen.emplace(std::min(ia, ib), std::max(ia, ib)).second) {
      throw InvalidGraph("duplicate edge " + a + " - " + b);
    }
    const double w = euclidean(nodes_[ia].position, nodes_[ib].position);
    if (!(w > 0.0)) throw InvalidGraph("zero-length edge " + a + " - " + b);
    adjacency_[ia].push_back({ib, w});
    adjacency_[ib].push_back({ia, w});
  }
  const auto rank = lexicographic_rank(nodes_);
  for (auto& adj : adjacency_) {
    std::sort(adj.begin(), adj.end(),
              [&](const Edge& x, const Edge& y) { return rank[x.to] < rank[y.to]; });
  }

  const std::size_t n = nodes_.size();
  apsp_.assign(n * n, kInf);
  for (std::size_t s = 0; s < n; ++s) {
    const auto sp = single_source(adjacency_, rank, s);
    std::copy(sp.dist.begin(), sp.dist.end(), apsp_.begin() + static_cast<std::ptrdiff_t>(s * n));
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!std::isfinite(apsp_[i])) throw InvalidGraph("graph is not connected: " + nodes_[i].id);
  }
}

std::size_t NavGraph::index_of(const NodeId& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw UnknownNode("'" + id + "'");
  return it->second;
}

std::optional<double> NavGraph::edge_weight(std::size_t a, std::size_t b) const {
  for (const auto& e : adjacency_.at(a)) {
    if (e.to == b) return e.weight;
  }
  return std::nullopt;
}

bool NavGraph::adjacent(const NodeId& a, const NodeId& b) const {
  return edge_weight(index_of(a), index_of(b)).has_value();
}

std::vector<std::pair<NodeId, NodeId>> NavGraph::edge_list() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (std::size_t i = 0; i < adjacency_.size(); ++i) {
    for (const auto& e : adjacency_[i]) {
      const auto& a = nodes_[i].id;
      const auto& b = nodes_[e.to].id;
      if (a < b) out.emplace_back(a, b);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> NavGraph::nodes_with_objects() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].objects.empty()) out.push_back(i);
  }
  return out;
}

std::vector<std::string> NavGraph::rooms() const {
  std::set<std::string> s;
  for (const auto& n : nodes_) s.insert(n.room);
  return {s.begin(), s.end()};
}

Path dijkstra(const NavGraph& graph, std::size_t from, std::size_t to) {
  std::vector<std::vector<Edge>> adjacency(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto nb = graph.neighbors(i);
    adjacency[i].assign(nb.begin(), nb.end());
  }
  const auto sp = single_source(adjacency, lexicographic_rank(graph.nodes()), from);
  Path path;
  path.length = sp.dist[to];
  for (std::size_t v = to; v != from; v = sp.pred[v]) {
    path.nodes.push_back(graph.node(v).id);
  }
  path.nodes.push_back(graph.node(from).id);
  std::reverse(path.nodes.begin(), path.nodes.end());
  return path;
}

Path dijkstra(const NavGraph& graph, const NodeId& from, const NodeId& to) {
  return dijkstra(graph, graph.index_of(from), graph.index_of(to));
}

double geodesic_distance(const NavGraph& graph, const NodeId& a, const NodeId& b) {
  return graph.distance(graph.index_of(a), graph.index_of(b));
}

double walk_length(const NavGraph& graph, const std::vector<NodeId>& walk) {
  double total = 0.0;
  for (std::size_t i = 1; i < walk.size(); ++i) {
    if (walk[i] == walk[i - 1]) continue;
    const auto w = graph.edge_weight(graph.index_of(walk[i - 1]), graph.index_of(walk[i]));
    if (!w) throw InvalidGraph("walk step " + walk[i - 1] + " -> " + walk[i] + " is not an edge");
    total += *w;
  }
  return total;
}

int object_sector(const std::string& label) {
  return static_cast<int>(fnv1a(label) % kSectors);
}

Feature featurize_observation(const Node& node, int sector, int feature_dim) {
  std::vector<double> acc(static_cast<std::size_t>(feature_dim), 0.0);
  const auto room_words = tokenize(node.room);
  for (const auto& w : room_words) {
    add_word_vector(acc, w, 1.0 / std::sqrt(static_cast<double>(room_words.size())));
  }
  for (const auto& o : node.objects) {
    if (object_sector(o) != sector) continue;
    for (const auto& w : tokenize(o)) add_word_vector(acc, w, 1.0);
  }
  add_word_vector(acc, "<sector" + std::to_string(sector) + ">", 0.5);
  return normalized(acc);
}

Feature embed_words(const Tokens& words, int feature_dim) {
  std::vector<double> acc(static_cast<std::size_t>(feature_dim), 0.0);
  std::set<std::string> unique(words.begin(), words.end());
  for (const auto& w : unique) {
    if (is_special_token(w)) continue;
    add_word_vector(acc, w, 1.0);
  }
  return normalized(acc);
}

double cosine(const Feature& a, const Feature& b) {
  if (a.size() != b.size()) throw InvalidGraph("cosine of vectors with different sizes");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

NavGraph generate_environment(std::uint64_t seed, const EnvConfig& config) {
  if (config.rooms < 2) throw InvalidConfig("need at least 2 rooms");
  if (config.nodes_per_room < 2) throw InvalidConfig("need at least 2 nodes per room");
  if (config.feature_dim < 1) throw InvalidConfig("feature dimension must be positive");
  if (!(config.room_size > 0.0) || !(config.room_spacing > config.room_size)) {
    throw InvalidConfig("room spacing must exceed room size > 0");
  }
  if (config.extra_edge_prob < 0.0 || config.extra_edge_prob > 1.0) {
    throw InvalidConfig("extra_edge_prob must lie in [0, 1]");
  }

  Rng rng(seed);
  const auto& vocab = labels();
  auto room_names = vocab.rooms;
  rng.shuffle(room_names);

  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(config.rooms))));
  std::vector<Node> nodes;
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(config.rooms));
  std::vector<std::pair<NodeId, NodeId>> edges;
  char buf[32];

  for (int r = 0; r < config.rooms; ++r) {
    const double cx = (r % cols) * config.room_spacing + rng.uniform(-0.5, 0.5);
    const double cy = (r / cols) * config.room_spacing + rng.uniform(-0.5, 0.5);
    const double half = config.room_size / 2.0;
    for (int k = 0; k < config.nodes_per_room; ++k) {
      Vec3 p;
      for (int attempt = 0; attempt < 50; ++attempt) {
        p = {cx + rng.uniform(-half, half), cy + rng.uniform(-half, half), 0.0};
        bool clear = true;
        for (auto m : members[static_cast<std::size_t>(r)]) {
          if (euclidean(p, nodes[m].position) < 0.75) clear = false;
        }
        if (clear) break;
      }
      Node n;
      std::snprintf(buf, sizeof buf, "n%03zu", nodes.size());
      n.id = buf;
      n.position = p;
      n.room = room_names[static_cast<std::size_t>(r) % room_names.size()];
      const auto count = rng.uniform_int(0, 3);
      std::set<std::string> objs;
      while (static_cast<std::int64_t>(objs.size()) < count) {
        objs.insert(vocab.objects[rng.index(vocab.objects.size())]);
      }
      n.objects.assign(objs.begin(), objs.end());
      members[static_cast<std::size_t>(r)].push_back(nodes.size());
      nodes.push_back(std::move(n));
    }
  }

  // Within a room: Prim's minimum spanning tree plus a few short extra edges.
  std::set<std::pair<std::size_t, std::size_t>> edge_set;
  auto link = [&](std::size_t a, std::size_t b) {
    if (a == b) return;
    if (edge_set.emplace(std::min(a, b), std::max(a, b)).second) {
      edges.emplace_back(nodes[a].id, nodes[b].id);
    }
  };
  for (const auto& room : members) {
    std::vector<bool> in_tree(room.size(), false);
    in_tree[0] = true;
    for (std::size_t added = 1; added < room.size(); ++added) {
      double best = kInf;
      std::pair<std::size_t, std::size_t> pick{0, 0};
      for (std::size_t i = 0; i < room.size(); ++i) {
        if (!in_tree[i]) continue;
        for (std::size_t j = 0; j < room.size(); ++j) {
          if (in_tree[j]) continue;
          const double d = euclidean(nodes[room[i]].position, nodes[room[j]].position);
          if (d < best) best = d, pick = {i, j};
        }
      }
      in_tree[pick.second] = true;
      link(room[pick.first], room[pick.second]);
    }
    for (std::size_t i = 0; i < room.size(); ++i) {
      for (std::size_t j = i + 1; j < room.size(); ++j) {
        if (rng.bernoulli(config.extra_edge_prob)) link(room[i], room[j]);
      }
    }
  }

  // Between rooms: random spanning tree over the room grid, then extra doors.
  std::vector<std::pair<int, int>> grid_pairs;
  for (int r = 0; r < config.rooms; ++r) {
    if (r % cols + 1 < cols && r + 1 < config.rooms) grid_pairs.emplace_back(r, r + 1);
    if (r + cols < config.rooms) grid_pairs.emplace_back(r, r + cols);
  }
  rng.shuffle(grid_pairs);
  std::vector<int> parent(static_cast<std::size_t>(config.rooms));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
    return x;
  };
  auto door = [&](int ra, int rb) {
    double best = kInf;
    std::pair<std::size_t, std::size_t> pick{0, 0};
    for (auto a : members[static_cast<std::size_t>(ra)]) {
      for (auto b : members[static_cast<std::size_t>(rb)]) {
        const double d = euclidean(nodes[a].position, nodes[b].position);
        if (d < best) best = d, pick = {a, b};
      }
    }
    link(pick.first, pick.second);
  };
  for (const auto& [ra, rb] : grid_pairs) {
    const int fa = find(ra), fb = find(rb);
    if (fa != fb) {
      parent[static_cast<std::size_t>(fa)] = fb;
      door(ra, rb);
    } else if (rng.bernoulli(config.extra_edge_prob * 0.5)) {
      door(ra, rb);
    }
  }

  return NavGraph("env-" + std::to_string(seed), config.feature_dim, std::move(nodes), edges);
}

json graph_to_json(const NavGraph& graph, bool with_panorama) {
  json j;
  j["env"] = graph.env_id();
  j["d_v"] = graph.feature_dim();
  json nodes = json::array();
  for (const auto& n : graph.nodes()) {
    json jn;
    jn["id"] = n.id;
    jn["position"] = {n.position.x, n.position.y, n.position.z};
    jn["room"] = n.room;
    jn["objects"] = n.objects;
    if (with_panorama) {
      json pano = json::array();
      for (const auto& f : n.panorama) pano.push_back(f);
      jn["panorama"] = std::move(pano);
    }
    nodes.push_back(std::move(jn));
  }
  j["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const auto& [a, b] : graph.edge_list()) edges.push_back({a, b});
  j["edges"] = std::move(edges);
  return j;
}

NavGraph graph_from_json(const json& j) {
  try {
    const int d_v = j.at("d_v").get<int>();
    std::vector<Node> nodes;
    for (const auto& jn : j.at("nodes")) {
      Node n;
      n.id = jn.at("id").get<std::string>();
      const auto pos = jn.at("position").get<std::vector<double>>();
      if (pos.size() != 3) throw InvalidGraph("position of " + n.id + " must have 3 components");
      n.position = {pos[0], pos[1], pos[2]};
      n.room = jn.at("room").get<std::string>();
      n.objects = jn.value("objects", std::vector<std::string>{});
      if (jn.contains("panorama") && !jn.at("panorama").is_null()) {
        const auto pano = jn.at("panorama").get<std::vector<Feature>>();
        if (pano.size() != kSectors) {
          throw InvalidGraph("node " + n.id + " panorama must have 6 sectors");
        }
        for (int s = 0; s < kSectors; ++s) n.panorama[s] = pano[static_cast<std::size_t>(s)];
        if (std::any_of(pano.begin(), pano.end(), [](const Feature& f) { return f.empty(); })) {
          throw InvalidGraph("node " + n.id + " has an empty panorama sector");
        }
      }
      nodes.push_back(std::move(n));
    }
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (const auto& je : j.at("edges")) {
      if (!je.is_array() || je.size() != 2) throw InvalidGraph("edge must be a pair of ids");
      edges.emplace_back(je[0].get<std::string>(), je[1].get<std::string>());
    }
    return NavGraph(j.value("env", std::string{}), d_v, std::move(nodes), edges);
  } catch (const json::exception& e) {
    throw FormatError(std::string("graph JSON: ") + e.what());
  }
}

void save_graph(const NavGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << graph_to_json(graph).dump() << '\n';
}

NavGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return graph_from_json(j);
}

}  // namespace vdn
