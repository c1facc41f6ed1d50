// Copyright 2026 The styleflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// HTTP front end for interactive grading. One model per process, shared
// read-only; each session caches the conditioning of its uploaded image.
//
//   POST /sessions                 PNG body (or multipart field "image")
//   GET  /sessions/{id}/map?z=...  PNG; depth=8|16, preview=1 for 8-bit
//   POST /sessions/{id}/extract    target PNG -> style record
//   GET  /models/{id}/styles       training-set style scatter
//   GET  /healthz

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
// <resolv.h> (pulled in by httplib) defines _res, which Eigen uses as an identifier.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>

#include "styleflow/container.hpp"
#include "styleflow/error.hpp"
#include "styleflow/image_io.hpp"
#include "styleflow/style.hpp"

namespace styleflow {

struct ServiceOptions {
  std::size_t max_upload_bytes = 64u << 20;
  int default_depth = 16;
};

struct Session {
  std::string id;
  ImageBuffer source;
  Conditioning<float> conditioning;
  std::optional<ImageBuffer> target;
};

// Parses "v1,v2,...". Throws ArgumentError on malformed numbers.
inline std::vector<double> parse_style_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ArgumentError("z: '" + item + "' is not a number");
    }
    if (used != item.size() || !std::isfinite(v)) throw ArgumentError("z: '" + item + "' is not a number");
    out.push_back(v);
  }
  if (!text.empty() && text.back() == ',') throw ArgumentError("z: trailing comma");
  return out;
}

class StyleService {
 public:
  StyleService(FlowModel<float> model, std::string model_id, std::vector<StyleEntry> styles = {},
               ServiceOptions options = {})
      : model_(std::move(model)), model_id_(std::move(model_id)), styles_(std::move(styles)),
        options_(options), rng_(std::random_device{}()) {
    if (!model_.actnorm_ready()) throw Error("service: model is not initialized");
  }

  const std::string& model_id() const { return model_id_; }
  const FlowModel<float>& model() const { return model_; }

  std::shared_ptr<const Session> create_session(const ImageBuffer& source) {
    auto s = std::make_shared<Session>();
    s->source = source;
    s->conditioning = make_conditioning<float>(source, model_.config.degree);
    std::unique_lock lock(mutex_);
    do {
      s->id = next_id();
    } while (sessions_.count(s->id));
    sessions_[s->id] = s;
    return s;
  }

  std::shared_ptr<const Session> find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::size_t session_count() const {
    std::shared_lock lock(mutex_);
    return sessions_.size();
  }

  // Same encoder and renderer as the command line.
  std::vector<std::uint8_t> render_png(const Session& s, const StyleVector& z, int depth) const {
    return encode_png(apply_style(model_, s.conditioning, z), depth);
  }

  StyleVector extract(const Session& s, const ImageBuffer& target) const {
    return extract_style(model_, s.conditioning, target);
  }

  void mount(httplib::Server& server) {
    server.set_payload_max_length(options_.max_upload_bytes);

    server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      json_reply(res, 200,
                 {{"status", "ok"}, {"model_id", model_id_}, {"dims", model_.latent_dim()},
                  {"variant", variant_name(model_.variant())}, {"degree", model_.config.degree},
                  {"sessions", session_count()}});
    });

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto image = decode_upload(req, "image");
        auto s = create_session(image);
        json_reply(res, 201,
                   {{"session_id", s->id}, {"model_id", model_id_}, {"dims", model_.latent_dim()},
                    {"width", image.width()}, {"height", image.height()}});
      });
    });

    server.Get(R"(/sessions/([^/]+)/map)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = require_session(req.matches[1]);
        if (!s) return not_found(res, "unknown session");
        StyleVector z{parse_style_list(req.get_param_value("z")), Provenance::kManual, {}};
        if (z.dims() != model_.latent_dim())
          return json_reply(res, 400,
                            {{"error", "z has " + std::to_string(z.dims()) + " values, model expects " +
                                           std::to_string(model_.latent_dim())}});
        int depth = options_.default_depth;
        if (req.has_param("depth")) depth = std::stoi(req.get_param_value("depth"));
        if (req.get_param_value("preview") == "1") depth = 8;
        if (depth != 8 && depth != 16) return json_reply(res, 400, {{"error", "depth must be 8 or 16"}});
        const auto png = render_png(*s, z, depth);
        res.status = 200;
        res.set_content(std::string(png.begin(), png.end()), "image/png");
      });
    });

    server.Post(R"(/sessions/([^/]+)/extract)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = require_session(req.matches[1]);
        if (!s) return not_found(res, "unknown session");
        const auto target = decode_upload(req, "target");
        if (!target.same_size(s->source))
          return json_reply(res, 400, {{"error", "target size differs from the session image"}});
        json_reply(res, 200, style_to_json(extract(*s, target), model_id_));
      });
    });

    server.Get(R"(/models/([^/]+)/styles)", [this](const httplib::Request& req, httplib::Response& res) {
      if (req.matches[1] != model_id_) return not_found(res, "unknown model");
      json_reply(res, 200, style_map_to_json(styles_, model_id_));
    });
  }

 private:
  static void json_reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static void not_found(httplib::Response& res, const std::string& what) {
    json_reply(res, 404, {{"error", what}});
  }

  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const ArgumentError& e) {
      json_reply(res, 400, {{"error", e.what()}});
    } catch (const FormatError& e) {
      json_reply(res, 400, {{"error", e.what()}});
    } catch (const ShapeError& e) {
      json_reply(res, 400, {{"error", e.what()}});
    } catch (const std::invalid_argument& e) {
      json_reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      json_reply(res, 500, {{"error", e.what()}});
    }
  }

  std::shared_ptr<const Session> require_session(const std::string& id) const { return find(id); }

  ImageBuffer decode_upload(const httplib::Request& req, const std::string& field) const {
    std::string body;
    if (req.is_multipart_form_data()) {
      if (!req.has_file(field)) throw ArgumentError("multipart upload lacks field '" + field + "'");
      body = req.get_file_value(field).content;
    } else {
      body = req.body;
    }
    if (body.empty()) throw ArgumentError("empty upload");
    if (body.size() > options_.max_upload_bytes) throw ArgumentError("upload too large");
    return decode_png(std::string_view(body), "upload").image;
  }

  std::string next_id() {
    std::lock_guard lock(id_mutex_);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng_()));
    return buf;
  }

  FlowModel<float> model_;
  std::string model_id_;
  std::vector<StyleEntry> styles_;
  ServiceOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex id_mutex_;
  std::mt19937_64 rng_;
};

}  // namespace styleflow
