// Copyright 2026 The Counselflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef COUNSELFLOW_HTTP_TRANSPORT_HPP_
#define COUNSELFLOW_HTTP_TRANSPORT_HPP_

#include <string>
#include <utility>

#include <httplib.h>

#include "counselflow/error.hpp"
#include "counselflow/llm_client.hpp"

namespace counselflow {

/// "https://host:8443/prefix/v1/x" -> {"https://host:8443", "/prefix/v1/x"}.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::kConfigError, "URL has no scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// Blocking HTTP(S) transport backed by cpp-httplib.
class HttplibTransport : public Transport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    const auto [origin, path] = split_url(request.url);
    httplib::Client client(origin);
    const auto secs = request.timeout.count() / 1000;
    const auto usecs = (request.timeout.count() % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : request.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        headers.emplace(k, v);
      }
    }
    auto res = client.Post(path, headers, request.body, content_type);
    HttpResponse out;
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
        out.timed_out = true;
      }
      out.transport_error = httplib::to_string(err);
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }
};

}  // namespace counselflow

#endif  // COUNSELFLOW_HTTP_TRANSPORT_HPP_
