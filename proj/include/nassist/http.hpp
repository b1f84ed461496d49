// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

// Binds a ChatService to an httplib server.

#pragma once

#include <string>

// Eigen must precede httplib: <resolv.h> defines a _res macro.
#include "nassist/service.hpp"

#include <httplib.h>

namespace nassist {

template <typename T>
void mount(httplib::Server& server, ChatService<T>& service) {
  const auto dispatch = [&service](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  const auto cors = [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  };
  server.set_post_routing_handler(cors);
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  for (const char* pattern : {R"(/health)", R"(/sessions)", R"(/sessions/[^/]+)", R"(/sessions/[^/]+/messages)"}) {
    server.Get(pattern, dispatch);
    server.Post(pattern, dispatch);
    server.Delete(pattern, dispatch);
    server.Put(pattern, dispatch);
    server.Patch(pattern, dispatch);
  }
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    res.set_content(nlohmann::json{{"error", "no such endpoint: " + req.path}, {"field", nullptr}}.dump(), "application/json");
  });
}

}  // namespace nassist
