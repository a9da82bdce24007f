#include <httplib.h>

#include <charconv>
#include <thread>

#include "xctlab/error.hpp"
#include "xctlab/service.hpp"

namespace xct {

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownView:
    case ErrorCode::UnknownDataset:
      return 404;
    case ErrorCode::NoActiveDataset:
      return 409;
    case ErrorCode::Io:
      return 500;
    default:
      return 400;
  }
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", {{"code", code}, {"message", message}}}}.dump(), "application/json");
}

void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "BadParams", std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

double number_param(const httplib::Request& req, const char* key, double fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw Error(ErrorCode::BadParams, std::string("query parameter '") + key + "' must be a number");
  }
  return out;
}

std::int64_t int_value(const std::string& v, const char* what) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorCode::BadParams, std::string(what) + " must be an integer");
  }
  return out;
}

std::int64_t int_param(const httplib::Request& req, const char* key, std::int64_t fallback) {
  return req.has_param(key) ? int_value(req.get_param_value(key), key) : fallback;
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  return nlohmann::json::parse(req.body);
}

std::string sse_frame(const Event& e) {
  const nlohmann::json payload{{"seq", e.seq}, {"type", std::string(to_string(e.type))}, {"data", e.data}};
  return "id: " + std::to_string(e.seq) + "\nevent: " + std::string(to_string(e.type)) + "\ndata: " + payload.dump() +
         "\n\n";
}

}  // namespace

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::atomic<bool> stopping{false};
  explicit Impl(Service& s) : service(s) {}
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->server;
  Service& svc = service;
  Impl* impl = impl_.get();

  svr.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, {{"status", "ok"}}); });

  svr.Get("/datasets", guarded([&svc](const httplib::Request&, httplib::Response& res) {
            send_json(res, svc.list_datasets());
          }));

  svr.Post("/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             std::string id;
             if (body.contains("workspace")) {
               id = svc.create_session(workspace_from_json(body["workspace"]));
             } else {
               id = svc.create_session();
             }
             send_json(res, {{"session", id}, {"workspace", workspace_to_json(svc.workspace(id))}}, 201);
           }));

  svr.Get(R"(/sessions/([^/]+)/workspace)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, workspace_to_json(svc.workspace(req.matches[1])));
          }));

  svr.Post(R"(/sessions/([^/]+)/frames)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             if (!svc.has_session(id)) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
             GrayImage frame;
             try {
               const auto* data = reinterpret_cast<const std::byte*>(req.body.data());
               frame = decode_frame({data, req.body.size()});
             } catch (const Error& e) {
               throw Error(ErrorCode::BadParams, std::string("frame body must be PNG or PGM: ") + e.what());
             }
             send_json(res, to_json(svc.ingest_frame(id, frame)));
           }));

  svr.Post(R"(/sessions/([^/]+)/dataset)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             if (!body.contains("dataset") || !body["dataset"].is_string()) {
               throw Error(ErrorCode::BadParams, "body needs a \"dataset\" string");
             }
             const auto events = svc.select_dataset(req.matches[1], body["dataset"].get<std::string>());
             send_json(res, {{"changed", !events.empty()}, {"events", events.size()}});
           }));

  svr.Get(R"(/sessions/([^/]+)/render)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            RenderRequest r;
            r.mode = parse_render_mode(req.has_param("mode") ? req.get_param_value("mode") : "mip");
            if (req.has_param("view")) r.view = req.get_param_value("view");
            r.azimuth_deg = number_param(req, "az", r.azimuth_deg);
            r.elevation_deg = number_param(req, "el", r.elevation_deg);
            if (req.has_param("dist")) r.distance_mm = number_param(req, "dist", 0.0);
            r.zoom = number_param(req, "zoom", r.zoom);
            r.fov_y_deg = number_param(req, "fov", r.fov_y_deg);
            r.width = static_cast<int>(int_param(req, "w", r.width));
            r.height = static_cast<int>(int_param(req, "h", r.height));
            r.step = number_param(req, "step", 0.0);
            if (req.has_param("tf")) r.tf = parse_transfer_function(req.get_param_value("tf"));
            const auto out = svc.get_render(req.matches[1], r);
            const std::string etag = "\"" + out.content_hash + "\"";
            res.set_header("X-Content-Hash", out.content_hash);
            res.set_header("ETag", etag);
            if (req.get_header_value("If-None-Match") == etag) {
              res.status = 304;
              return;
            }
            res.set_content(std::string(reinterpret_cast<const char*>(out.png.data()), out.png.size()), "image/png");
          }));

  svr.Get(R"(/sessions/([^/]+)/charts/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, svc.get_chart(req.matches[1], int_value(req.matches[2], "view id")));
          }));

  svr.Post(R"(/sessions/([^/]+)/views)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             if (!body.contains("kind") || !body["kind"].is_string()) {
               throw Error(ErrorCode::BadParams, "body needs a \"kind\" string");
             }
             Pose6DoF pose;
             if (body.contains("pose")) {
               try {
                 pose = pose_from_json(body["pose"]);
               } catch (const Error& e) {
                 throw Error(ErrorCode::BadParams, e.what());
               }
             }
             const auto kind = parse_view_kind(body["kind"].get<std::string>());
             const auto id = svc.place_view(req.matches[1], kind, body.value("params", nlohmann::json::object()), pose);
             send_json(res, {{"view_id", id}}, 201);
           }));

  svr.Patch(R"(/sessions/([^/]+)/views/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
              const auto body = parse_body(req);
              std::optional<Pose6DoF> pose;
              std::optional<nlohmann::json> params;
              if (body.contains("pose")) {
                try {
                  pose = pose_from_json(body["pose"]);
                } catch (const Error& e) {
                  throw Error(ErrorCode::BadParams, e.what());
                }
              }
              if (body.contains("params")) params = body["params"];
              const View v = svc.update_view(req.matches[1], int_value(req.matches[2], "view id"), pose, params);
              send_json(res, {{"id", v.id},
                              {"kind", std::string(to_string(v.kind))},
                              {"params", v.params},
                              {"pose", pose_to_json(v.pose)}});
            }));

  svr.Delete(R"(/sessions/([^/]+)/views/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               svc.remove_view(req.matches[1], int_value(req.matches[2], "view id"));
               res.status = 204;
             }));

  svr.Get(R"(/sessions/([^/]+)/slices)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const Axis axis = parse_axis(req.has_param("axis") ? req.get_param_value("axis") : "z");
            const auto png = svc.get_slice_png(req.matches[1], axis, int_param(req, "index", 0));
            res.set_content(std::string(reinterpret_cast<const char*>(png.data()), png.size()), "image/png");
          }));

  svr.Get(R"(/sessions/([^/]+)/meshes)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            std::size_t count = 0;
            const auto bytes = svc.get_meshes(req.matches[1], static_cast<int>(int_param(req, "segments", 16)), &count);
            res.set_header("X-Mesh-Count", std::to_string(count));
            res.set_content(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                            "application/octet-stream");
          }));

  svr.Get(R"(/sessions/([^/]+)/intensity-histogram)",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, svc.get_intensity_histogram(req.matches[1], static_cast<int>(int_param(req, "bins", 64))));
          }));

  svr.Get(R"(/sessions/([^/]+)/events)", guarded([&svc, impl](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            if (!svc.has_session(id)) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
            std::int64_t since = int_param(req, "since", 0);
            if (req.has_header("Last-Event-ID")) since = int_value(req.get_header_value("Last-Event-ID"), "Last-Event-ID");
            const std::int64_t limit = int_param(req, "limit", -1);
            auto sent = std::make_shared<std::int64_t>(0);
            auto cursor = std::make_shared<std::int64_t>(since);
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream", [&svc, impl, id, limit, sent, cursor](std::size_t, httplib::DataSink& sink) {
                  if (impl->stopping || (limit >= 0 && *sent >= limit)) {
                    sink.done();
                    return true;
                  }
                  const auto events = svc.wait_events(id, *cursor, std::chrono::milliseconds(500));
                  if (events.empty()) {
                    const std::string ping = ": keep-alive\n\n";
                    return sink.is_writable() && sink.write(ping.data(), ping.size());
                  }
                  for (const auto& e : events) {
                    if (limit >= 0 && *sent >= limit) break;
                    const std::string frame = sse_frame(e);
                    if (!sink.write(frame.data(), frame.size())) return false;
                    *cursor = e.seq;
                    ++*sent;
                  }
                  return true;
                });
          }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  impl_->stopping = true;
  impl_->service.shutdown();
  impl_->server.stop();
}

}  // namespace xct
