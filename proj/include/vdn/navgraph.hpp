#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vdn/text.hpp"

namespace vdn {

inline constexpr int kSectors = 6;
inline constexpr int kDefaultFeatureDim = 64;

using NodeId = std::string;
using Feature = std::vector<float>;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  bool operator==(const Vec3&) const = default;
};

double euclidean(const Vec3& a, const Vec3& b);

// Heading of the segment a->b in the horizontal plane, degrees in [0, 360),
// counter-clockwise from +x.
double bearing_deg(const Vec3& from, const Vec3& to);

// Nearest 60-degree bucket; exact ties go to the lower sector index.
int sector_of_bearing(double deg);

struct Node {
  NodeId id;
  Vec3 position;
  std::string room;
  std::vector<std::string> objects;  // sorted, unique
  std::array<Feature, kSectors> panorama;

  bool has_object(const std::string& label) const;
  // Room words plus object labels, the keywords a navigator can match.
  Tokens label_tokens() const;
};

struct Edge {
  std::size_t to;
  double weight;
};

struct Path {
  std::vector<NodeId> nodes;
  double length = 0.0;
  bool operator==(const Path&) const = default;
};

// Immutable topological environment. Edge weights are Euclidean distances
// between endpoint positions and are never stored externally.
class NavGraph {
 public:
  NavGraph() = default;
  // Validates every invariant (connected, no self loops or duplicate edges,
  // six sectors of equal dimension). Empty panoramas are featurized.
  NavGraph(std::string env_id, int feature_dim, std::vector<Node> nodes,
           const std::vector<std::pair<NodeId, NodeId>>& edges);

  const std::string& env_id() const { return env_id_; }
  int feature_dim() const { return feature_dim_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(std::size_t index) const { return nodes_.at(index); }
  const Node& node(const NodeId& id) const { return nodes_[index_of(id)]; }

  bool contains(const NodeId& id) const { return index_.count(id) > 0; }
  std::size_t index_of(const NodeId& id) const;  // throws UnknownNode
  std::span<const Edge> neighbors(std::size_t index) const { return adjacency_.at(index); }
  std::optional<double> edge_weight(std::size_t a, std::size_t b) const;
  bool adjacent(const NodeId& a, const NodeId& b) const;

  // Undirected edges as (a, b) with a < b, sorted.
  std::vector<std::pair<NodeId, NodeId>> edge_list() const;

  // Precomputed shortest-path distance (same arithmetic as dijkstra()).
  double distance(std::size_t a, std::size_t b) const { return apsp_[a * nodes_.size() + b]; }

  // Nodes carrying at least one object label.
  std::vector<std::size_t> nodes_with_objects() const;
  std::vector<std::string> rooms() const;

 private:
  std::string env_id_;
  int feature_dim_ = kDefaultFeatureDim;
  std::vector<Node> nodes_;
  std::map<NodeId, std::size_t> index_;
  std::vector<std::vector<Edge>> adjacency_;
  std::vector<double> apsp_;
};

// Minimum-weight path. Equal-length alternatives resolve to the predecessor
// with the lexicographically smaller NodeId.
Path dijkstra(const NavGraph& graph, const NodeId& from, const NodeId& to);
Path dijkstra(const NavGraph& graph, std::size_t from, std::size_t to);

double geodesic_distance(const NavGraph& graph, const NodeId& a, const NodeId& b);

// Sum of edge weights along consecutive nodes; throws InvalidGraph when two
// consecutive nodes are not adjacent (repeated nodes contribute zero).
double walk_length(const NavGraph& graph, const std::vector<NodeId>& walk);

struct EnvConfig {
  int rooms = 4;
  int nodes_per_room = 3;
  int feature_dim = kDefaultFeatureDim;
  double room_size = 4.0;     // side of the square a room's nodes are placed in
  double room_spacing = 6.5;  // distance between neighbouring room centres
  double extra_edge_prob = 0.3;
};

NavGraph generate_environment(std::uint64_t seed, const EnvConfig& config = {});

// Which panorama sector an object label shows up in.
int object_sector(const std::string& label);

// Deterministic hashed embedding of (room words, objects visible in the
// sector, sector index), L2-normalized.
Feature featurize_observation(const Node& node, int sector, int feature_dim);

// Hashed bag-of-words embedding in the same space as featurize_observation.
Feature embed_words(const Tokens& words, int feature_dim);

double cosine(const Feature& a, const Feature& b);

nlohmann::json graph_to_json(const NavGraph& graph, bool with_panorama = true);
NavGraph graph_from_json(const nlohmann::json& j);
void save_graph(const NavGraph& graph, const std::string& path);
NavGraph load_graph(const std::string& path);

}  // namespace vdn
