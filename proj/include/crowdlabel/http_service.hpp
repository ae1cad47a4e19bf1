#pragma once

#include <string>

#include "httplib.h"

#include "crowdlabel/service.hpp"

namespace crowdlabel {

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}, {"status", status}});
}

template <typename Handler>
auto guarded(Handler h) {
  return [h](const httplib::Request& req, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    try {
      h(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    }
  };
}

}  // namespace detail

/// Registers the v1 annotation API on `server`. `store` must outlive it.
///
///   GET  /v1/tasks/next?worker=&stage=   -> {"stage", "task"} or {"task": null}
///   POST /v1/responses                   -> {"ok", "qc_flag", "log_size"}
///   GET  /v1/progress
///   GET  /v1/annotations/{image}
///   GET  /v1/export/{kind}                (X-Content-Hash header carries sha256)
///   POST /v1/aggregate
inline void mount_service(httplib::Server& server, TaskStore& store) {
  using detail::guarded;
  using detail::send_json;

  server.Get("/v1/tasks/next", guarded([&store](const httplib::Request& req, httplib::Response& res) {
               if (!req.has_param("worker") || !req.has_param("stage"))
                 throw ServiceError(400, "query parameters worker and stage are required");
               auto task = store.next_task(req.get_param_value("worker"), req.get_param_value("stage"));
               send_json(res, 200, task ? *task : json{{"task", nullptr}});
             }));

  server.Post("/v1/responses", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                json body;
                try {
                  body = json::parse(req.body);
                } catch (const json::parse_error& e) {
                  throw ServiceError(400, std::string("malformed JSON: ") + e.what());
                }
                auto ack = store.submit(body);
                send_json(res, 200, json{{"ok", true}, {"qc_flag", ack.qc_flag}, {"log_size", ack.log_size}});
              }));

  server.Get("/v1/progress", guarded([&store](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, store.progress());
             }));

  server.Get(R"(/v1/annotations/([^/]+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
               const std::string image = req.matches[1];
               auto a = store.annotation(image);
               if (!a) throw ServiceError(404, "no annotation for image '" + image + "'");
               send_json(res, 200, *a);
             }));

  server.Get(R"(/v1/export/([a-z_]+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
               auto out = store.export_kind(req.matches[1]);
               res.status = 200;
               res.set_header("X-Content-Hash", out.sha256);
               res.set_content(out.content, "application/x-ndjson");
             }));

  server.Post("/v1/aggregate", guarded([&store](const httplib::Request&, httplib::Response& res) {
                send_json(res, 200, json{{"annotations", store.aggregate()}});
              }));

  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace crowdlabel
