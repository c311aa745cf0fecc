#include <httplib.h>

#include "kilnwatch/tile_ingest.hpp"

namespace kw::ingest {

HttpProvider::HttpProvider(std::string endpoint, std::chrono::seconds timeout) : timeout_(timeout) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("provider endpoint needs a scheme: " + endpoint);
    const auto path_start = endpoint.find('/', scheme_end + 3);
    scheme_host_ = endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
}

std::vector<std::uint8_t> HttpProvider::fetch(const TileRequest& request, const std::string& key) {
    httplib::Client client(scheme_host_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_follow_location(true);
    const std::string target = path_ + (path_.find('?') == std::string::npos ? "?" : "&") + request.query_string(key);
    auto res = client.Get(target);
    if (!res) throw TransportError("GET " + scheme_host_ + path_ + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw TransportError("GET " + scheme_host_ + path_ + " returned HTTP " + std::to_string(res->status));
    return {res->body.begin(), res->body.end()};
}

}  // namespace kw::ingest
