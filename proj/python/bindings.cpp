// Python bindings. Structured values cross the boundary as JSON text and are
// decoded by the pure-Python wrapper in vdn/__init__.py.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <thread>

#include "vdn/errors.hpp"
#include "vdn/harness.hpp"
#include "vdn/jsonl.hpp"
#include "vdn/server.hpp"
#include "vdn/session.hpp"

namespace py = pybind11;
using namespace vdn;
using nlohmann::json;

namespace {

EnvironmentSet env_set(const std::vector<NavGraph>& graphs) {
  EnvironmentSet envs;
  for (const auto& g : graphs) envs.emplace(g.env_id(), g);
  return envs;
}

std::vector<Episode> episodes_from(const std::vector<std::string>& docs) {
  std::vector<Episode> out;
  for (const auto& d : docs) out.push_back(episode_from_json(json::parse(d)));
  return out;
}

std::vector<Vec3> points(const std::vector<std::array<double, 3>>& xs) {
  std::vector<Vec3> out;
  for (const auto& p : xs) out.push_back({p[0], p[1], p[2]});
  return out;
}

// Serves a SessionManager on a background thread for the lifetime of the object.
class BackgroundServer {
 public:
  BackgroundServer(std::shared_ptr<SessionManager> sessions, const std::string& host, int port)
      : server_(std::move(sessions), ServerOptions{.host = host, .port = port}) {
    port_ = server_.bind();
    thread_ = std::thread([this] { server_.serve(); });
  }
  ~BackgroundServer() { stop(); }
  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  int port() const { return port_; }

 private:
  SessionServer server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

PYBIND11_MODULE(_vdn, m) {
  m.doc() = "Dialogue navigation toolkit";

  static py::exception<Error> error(m, "VdnError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      PyErr_SetObject(exc.ptr(), py::make_tuple(e.kind(), e.what()).ptr());
    }
  });

  py::class_<NavGraph>(m, "NavGraph")
      .def_static("from_json", [](const std::string& s) { return graph_from_json(json::parse(s)); })
      .def("to_json", [](const NavGraph& g, bool panorama) { return graph_to_json(g, panorama).dump(); },
           py::arg("with_panorama") = true)
      .def_property_readonly("env_id", &NavGraph::env_id)
      .def("__len__", &NavGraph::size)
      .def("node_ids",
           [](const NavGraph& g) {
             std::vector<std::string> ids;
             for (const auto& n : g.nodes()) ids.push_back(n.id);
             return ids;
           })
      .def("edges", &NavGraph::edge_list)
      .def("shortest_path",
           [](const NavGraph& g, const std::string& a, const std::string& b) {
             const auto p = dijkstra(g, a, b);
             return py::make_tuple(p.nodes, p.length);
           })
      .def("geodesic", [](const NavGraph& g, const std::string& a, const std::string& b) {
        return geodesic_distance(g, a, b);
      });

  m.def(
      "generate_environment",
      [](std::uint64_t seed, int rooms, int nodes_per_room, int feature_dim) {
        EnvConfig c;
        c.rooms = rooms;
        c.nodes_per_room = nodes_per_room;
        c.feature_dim = feature_dim;
        return generate_environment(seed, c);
      },
      py::arg("seed"), py::arg("rooms") = 4, py::arg("nodes_per_room") = 3, py::arg("feature_dim") = kDefaultFeatureDim);
  m.def("save_environments", [](const std::string& path, const std::vector<NavGraph>& gs) {
    save_environments(path, env_set(gs));
  });
  m.def("load_environments", [](const std::string& path) {
    std::vector<NavGraph> out;
    for (auto& [_, g] : load_environments(path)) out.push_back(g);
    return out;
  });

  m.def("synthesize_dataset", [](const std::vector<NavGraph>& gs, int count, std::uint64_t seed) {
    std::vector<std::string> out;
    for (const auto& ep : synthesize_dataset(env_set(gs), count, seed)) out.push_back(episode_to_json(ep).dump());
    return out;
  });
  m.def("split_ndh", [](const std::vector<std::string>& eps, const std::vector<NavGraph>& gs, const std::string& sup) {
    std::vector<std::string> out;
    for (const auto& i : split_ndh(episodes_from(eps), env_set(gs), supervision_from_name(sup))) {
      out.push_back(ndh_to_json(i).dump());
    }
    return out;
  });
  m.def("inter_turn_distances", [](const std::vector<std::string>& eps) {
    return inter_turn_distances(episodes_from(eps));
  });

  m.def("trigger_probability", &trigger_probability, py::arg("alpha"), py::arg("entropy"));
  m.def("bce_loss_and_gradient", [](double alpha, double h, int label) {
    const auto r = bce_loss_and_gradient(alpha, h, label);
    return py::make_tuple(r.loss, r.grad_alpha);
  });
  m.def("train_threshold", [](const std::vector<std::pair<double, int>>& records, int epochs, double lr) {
    std::vector<EntropyRecord> log;
    for (const auto& [h, a] : records) log.push_back({h, a, "", 0});
    const auto r = train_threshold(log, epochs, lr);
    return py::make_tuple(r.alpha, r.loss_curve, r.warning);
  });

  m.def("ndtw", [](const std::vector<std::array<double, 3>>& r, const std::vector<std::array<double, 3>>& q,
                   double threshold) { return ndtw(points(r), points(q), threshold); },
        py::arg("reference"), py::arg("query"), py::arg("threshold") = kSuccessRadius);
  m.def("spl", &spl);
  m.def("tokenize", [](const std::string& s) { return tokenize(s); });
  m.def("bleu", [](const Tokens& c, const Tokens& r, int n) { return bleu(c, r, n); });
  m.def("rouge_l", [](const Tokens& c, const Tokens& r) { return rouge_l(c, r); });
  m.def("evaluate_text", [](const std::vector<Tokens>& c, const std::vector<Tokens>& r) {
    return evaluate_text(c, r).to_json().dump();
  });

  m.def(
      "run_experiment",
      [](const std::string& config, const std::vector<std::string>& eps, const std::vector<NavGraph>& gs) {
        const auto cfg = RunConfig::from_json(json::parse(config));
        ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = run_experiment(cfg, episodes_from(eps), env_set(gs), make_backend(cfg));
        }
        std::vector<std::string> logs;
        for (const auto& l : res.logs) logs.push_back(l.to_json().dump());
        return py::make_tuple(res.report.to_json().dump(), logs);
      },
      py::arg("config"), py::arg("episodes"), py::arg("environments"));
  m.def("train_pipeline", [](const std::string& config) {
    const auto cfg = PipelineConfig::from_json(json::parse(config));
    PipelineArtifacts a;
    {
      py::gil_scoped_release release;
      a = train_pipeline(cfg);
    }
    return json{{"checkpoint", a.checkpoint}, {"vocabulary", a.vocabulary}, {"policy", a.policy},
                {"entropy_log", a.entropy_log}, {"threshold", a.threshold}, {"run_config", a.run_config},
                {"alpha", a.alpha}}
        .dump();
  });

  py::class_<SessionManager, std::shared_ptr<SessionManager>>(m, "SessionManager")
      .def(py::init([](const std::vector<NavGraph>& gs, const std::vector<std::string>& eps, const std::string& config,
                       int idle_timeout_s) {
             return std::make_shared<SessionManager>(env_set(gs), episodes_from(eps),
                                                     RunConfig::from_json(json::parse(config)),
                                                     std::chrono::seconds(idle_timeout_s));
           }),
           py::arg("environments"), py::arg("episodes"), py::arg("config"),
           py::arg("idle_timeout_s") = static_cast<int>(kDefaultIdleTimeout.count()))
      .def("create", [](SessionManager& s, const std::string& body) { return s.create(json::parse(body)).dump(); })
      .def("view", [](SessionManager& s, const std::string& id) { return s.view(id).dump(); })
      .def("answer", [](SessionManager& s, const std::string& id, const std::string& body) {
        return s.answer(id, json::parse(body)).dump();
      })
      .def("remove", &SessionManager::remove)
      .def("__len__", &SessionManager::size);

  py::class_<BackgroundServer>(m, "SessionServer")
      .def(py::init<std::shared_ptr<SessionManager>, const std::string&, int>(), py::arg("sessions"),
           py::arg("host") = "127.0.0.1", py::arg("port") = 0)
      .def_property_readonly("port", &BackgroundServer::port)
      .def("stop", &BackgroundServer::stop, py::call_guard<py::gil_scoped_release>());

  m.attr("SESSION_VIEW_SCHEMA") = kSessionViewSchema;
}
