#include "bodygps/service.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "bodygps/metaimage.hpp"
#include "bodygps/png_writer.hpp"
#include "bodygps/rng.hpp"

namespace bodygps {
namespace {

using nlohmann::json;

struct HttpError {
    int status;
    json body;
};

[[noreturn]] void fail(int status, const std::string& message) { throw HttpError{status, json{{"error", message}}}; }

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 parse_point(const json& j, const char* field) {
    if (!j.is_array() || j.size() != 3) fail(400, std::string(field) + " must be an array of three numbers");
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
        if (!j[a].is_number()) fail(400, std::string(field) + " must be an array of three numbers");
        const double value = j[a].get<double>();
        if (!std::isfinite(value)) fail(400, std::string(field) + " must be finite");
        (a == 0 ? p.x : a == 1 ? p.y : p.z) = value;
    }
    return p;
}

json parse_body(const httplib::Request& req) {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) fail(400, "request body must be a JSON object");
    return body;
}

double parse_number(const std::string& text, const char* what) {
    double value = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) fail(400, std::string("invalid ") + what + ": '" + text + "'");
    return value;
}

std::int64_t parse_int(const std::string& text, const char* what) {
    std::int64_t value = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) fail(400, std::string("invalid ") + what + ": '" + text + "'");
    return value;
}

json navigation_json(const NavigationResult& r) {
    json path = json::array();
    for (const auto& p : r.path) path.push_back(vec_json(p));
    return {{"point_mm", vec_json(r.final_point)},
            {"path", std::move(path)},
            {"converged", r.converged},
            {"iterations", r.iterations}};
}

template <typename Handler>
void guarded(httplib::Response& res, Handler&& handler) {
    try {
        handler();
    } catch (const HttpError& e) {
        res.status = e.status;
        res.set_content(e.body.dump(), "application/json");
    } catch (const Error& e) {
        res.status = 400;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
}

}  // namespace

Session SessionTable::create(std::shared_ptr<const Volume> volume) {
    std::lock_guard lock(mutex_);
    std::uint64_t state = next_++ * 0x9e3779b97f4a7c15ULL;
    char id[17];
    std::snprintf(id, sizeof id, "%016llx", static_cast<unsigned long long>(splitmix64(state)));
    auto session = std::make_shared<Session>();
    session->id = id;
    session->volume = std::move(volume);
    session->created_unix_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
    order_.push_front(session);
    index_[session->id] = order_.begin();
    while (order_.size() > capacity_) {
        index_.erase(order_.back()->id);
        order_.pop_back();
    }
    return *session;
}

std::shared_ptr<const Session> SessionTable::find(const std::string& id) {
    std::lock_guard lock(mutex_);
    const auto it = index_.find(id);
    if (it == index_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second);
    return *it->second;
}

std::size_t SessionTable::size() const {
    std::lock_guard lock(mutex_);
    return order_.size();
}

Service::Service(std::shared_ptr<const Engine> engine, ServiceConfig config)
    : engine_(std::move(engine)),
      config_(config),
      sessions_(config.max_sessions),
      server_(std::make_unique<httplib::Server>()) {
    if (!engine_) throw ConfigError("service needs an engine");
    if (config_.max_navigation_iters < 1) throw ConfigError("max_navigation_iters must be >= 1");
    install_routes();
}

Service::~Service() { stop(); }

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }
int Service::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }
bool Service::listen_after_bind() { return server_->listen_after_bind(); }
void Service::stop() {
    if (server_) server_->stop();
}
void Service::wait_until_ready() const { server_->wait_until_ready(); }

void Service::install_routes() {
    auto& srv = *server_;
    srv.set_payload_max_length(config_.max_upload_bytes);
    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            const char* message = res.status == 413 ? "payload too large" : res.status == 404 ? "not found" : "error";
            res.set_content(json{{"error", message}}.dump(), "application/json");
        }
    });

    srv.Post("/volumes", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            if (req.body.size() > config_.max_upload_bytes) fail(413, "volume exceeds the upload limit");
            std::shared_ptr<const Volume> volume;
            try {
                volume = std::make_shared<const Volume>(to_volume(parse_metaimage(req.body)));
            } catch (const Error& e) {
                fail(400, e.what());
            }
            const Session s = sessions_.create(volume);
            const auto& g = volume->geometry();
            const auto [lo, hi] = intensity_range(*volume);
            const json out{{"session_id", s.id},
                           {"dims", json::array({g.dims.i, g.dims.j, g.dims.k})},
                           {"spacing", vec_json(g.spacing)},
                           {"origin", vec_json(g.origin)},
                           {"intensity_range", json::array({lo, hi})}};
            res.set_content(out.dump(), "application/json");
        });
    });

    auto session_of = [this](const httplib::Request& req) {
        auto s = sessions_.find(req.matches[1]);
        if (!s) fail(404, "unknown session '" + std::string(req.matches[1]) + "'");
        return s;
    };

    srv.Get(R"(/volumes/([^/]+)/slice)", [this, session_of](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto s = session_of(req);
            const Volume& v = *s->volume;
            const std::string axis_text = req.has_param("axis") ? req.get_param_value("axis") : "z";
            if (axis_text.size() != 1 || axis_text[0] < 'x' || axis_text[0] > 'z') fail(400, "axis must be x, y or z");
            const Axis axis = static_cast<Axis>(axis_text[0] - 'x');
            if (!req.has_param("index")) fail(400, "missing index");
            const std::int64_t index = parse_int(req.get_param_value("index"), "index");
            if (index < 0 || index >= v.geometry().dims[static_cast<int>(axis)])
                fail(416, "index " + std::to_string(index) + " outside [0, " +
                              std::to_string(v.geometry().dims[static_cast<int>(axis)]) + ")");

            IntensityWindow window;
            if (req.has_param("window")) {
                const std::string w = req.get_param_value("window");
                const auto comma = w.find(',');
                if (comma == std::string::npos) fail(400, "window must be lo,hi");
                const double lo = parse_number(w.substr(0, comma), "window");
                const double hi = parse_number(w.substr(comma + 1), "window");
                if (!(lo < hi)) fail(400, "window needs lo < hi");
                window = IntensityWindow(lo, hi);
            } else {
                const auto [lo, hi] = intensity_range(v);
                window = IntensityWindow(lo, hi > lo ? hi : lo + 1.0);
            }
            const Slice8 slice = render_slice(v, axis, index, window);
            res.set_content(encode_png_gray8(slice.pixels, slice.width, slice.height), "image/png");
        });
    });

    srv.Post(R"(/volumes/([^/]+)/query)", [this, session_of](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto s = session_of(req);
            const json body = parse_body(req);
            if (!body.contains("point_mm")) fail(400, "missing point_mm");
            const WorldPoint p = parse_point(body["point_mm"], "point_mm");
            const QueryResult q = engine_->query(*s->volume, p);
            const json out{{"normalized", vec_json(q.coord.as_vec())},
                           {"atlas_point_mm", vec_json(q.atlas_point)},
                           {"label", q.label},
                           {"label_name", q.label_name},
                           {"latency_us", q.latency_us}};
            res.set_content(out.dump(), "application/json");
        });
    });

    srv.Post(R"(/volumes/([^/]+)/landmark)", [this, session_of](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto s = session_of(req);
            const Volume& v = *s->volume;
            const json body = parse_body(req);

            NormalizedCoord target;
            if (body.contains("target_normalized")) {
                target = NormalizedCoord::from_vec(parse_point(body["target_normalized"], "target_normalized"));
            } else if (body.contains("name")) {
                if (!body["name"].is_string()) fail(400, "name must be a string");
                const std::string name = body["name"].get<std::string>();
                const auto& landmarks = engine_->atlas().landmarks();
                if (!landmarks.count(name)) {
                    json available = json::array();
                    for (const auto& [known, _] : landmarks) available.push_back(known);
                    throw HttpError{422, json{{"error", "unknown landmark '" + name + "'"}, {"available", available}}};
                }
                target = engine_->atlas().landmark_normalized(name);
            } else {
                fail(400, "body needs name or target_normalized");
            }

            NavigationConfig nav;
            nav.tol_mm = config_.navigation_tol_mm;
            nav.max_iters = config_.max_navigation_iters;
            if (body.contains("max_iters")) {
                if (!body["max_iters"].is_number_integer()) fail(400, "max_iters must be an integer");
                const auto requested = body["max_iters"].get<std::int64_t>();
                if (requested < 1) fail(400, "max_iters must be >= 1");
                nav.max_iters = static_cast<int>(std::min<std::int64_t>(requested, config_.max_navigation_iters));
            }

            std::vector<WorldPoint> starts;
            if (body.contains("starts")) {
                if (!body["starts"].is_array() || body["starts"].empty()) fail(400, "starts must be a non-empty array");
                for (const auto& p : body["starts"]) starts.push_back(parse_point(p, "starts[]"));
            } else {
                starts.push_back(v.geometry().center());
            }

            std::vector<NavigationResult> runs;
            std::vector<WorldPoint> finals;
            for (const auto& start : starts) {
                runs.push_back(navigate(*engine_, v, target, start, nav));
                finals.push_back(runs.back().final_point);
            }

            json out = navigation_json(runs.front());
            if (runs.size() > 1) {
                out["point_mm"] = vec_json(coordinate_median(finals));
                out["converged"] = std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.converged; });
                int iterations = 0;
                json agents = json::array();
                for (const auto& r : runs) {
                    iterations = std::max(iterations, r.iterations);
                    agents.push_back(navigation_json(r));
                }
                out["iterations"] = iterations;
                out["agents"] = std::move(agents);
            }
            out["max_iters"] = nav.max_iters;
            res.set_content(out.dump(), "application/json");
        });
    });

    srv.Get("/atlas", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(atlas_json(engine_->atlas()), "application/json");
    });
}

}  // namespace bodygps
