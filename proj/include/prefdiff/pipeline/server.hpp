#pragma once

#include <string>

// Eigen must be parsed before httplib: <resolv.h> defines a `_res` macro
// that collides with Eigen parameter names.
#include "prefdiff/pipeline/annotation.hpp"
#include "httplib.h"

namespace prefdiff {

inline void json_reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

/// Registers the annotation API on `server`. The session must outlive it.
inline void mount_annotation_api(httplib::Server& server, AnnotationSession& session) {
  server.Get("/api/pair", [&session](const httplib::Request& req, httplib::Response& res) {
    const std::string evaluator = req.has_param("evaluator") ? req.get_param_value("evaluator") : "anonymous";
    if (auto p = session.next_pair(evaluator)) {
      json_reply(res, 200, *p);
    } else {
      json_reply(res, 200, Json{{"complete", true}});
    }
  });

  server.Post("/api/choice", [&session](const httplib::Request& req, httplib::Response& res) {
    Json body;
    try {
      body = Json::parse(req.body);
    } catch (const Json::parse_error&) {
      json_reply(res, 400, Json{{"accepted", false}, {"error", "body is not JSON"}});
      return;
    }
    if (!body.is_object() || !body.contains("pair_id") || !body.contains("evaluator") || !body.contains("choice") ||
        !body["pair_id"].is_string() || !body["evaluator"].is_string() || !body["choice"].is_string()) {
      json_reply(res, 400, Json{{"accepted", false}, {"error", "expected {pair_id, evaluator, choice}"}});
      return;
    }
    switch (session.submit(body["pair_id"], body["evaluator"], body["choice"])) {
      case ChoiceStatus::accepted: json_reply(res, 200, Json{{"accepted", true}}); return;
      case ChoiceStatus::duplicate:
        json_reply(res, 409, Json{{"accepted", false}, {"error", "evaluator already answered this pair"}});
        return;
      case ChoiceStatus::unknown_pair: json_reply(res, 404, Json{{"accepted", false}, {"error", "unknown pair_id"}}); return;
      case ChoiceStatus::closed: json_reply(res, 409, Json{{"accepted", false}, {"error", "session is closed"}}); return;
      case ChoiceStatus::bad_request:
        json_reply(res, 400, Json{{"accepted", false}, {"error", "choice must be \"A\", \"B\" or \"tie\""}});
        return;
    }
  });

  server.Get("/api/stats", [&session](const httplib::Request&, httplib::Response& res) {
    json_reply(res, 200, session.stats());
  });

  server.Post("/api/close", [&session](const httplib::Request&, httplib::Response& res) {
    session.close();
    json_reply(res, 200, Json{{"closed", true}});
  });

  server.Get("/api/export", [&session](const httplib::Request&, httplib::Response& res) {
    const auto records = session.export_records();
    if (!records) {
      json_reply(res, 409, Json{{"error", "close the session before export"}});
      return;
    }
    Json arr = Json::array();
    for (const ComparisonRecord& r : *records) arr.push_back(comparison_to_json(r));
    json_reply(res, 200, arr);
  });
}

}  // namespace prefdiff
