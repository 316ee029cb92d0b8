#pragma once

// Kept apart from dataio.hpp so only the CLI target pays for httplib.

#include <filesystem>
#include <fstream>
#include <string>

#ifdef DFLAB_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include "dflab/common.hpp"

namespace dflab::dataio {

/// Downloads a CSV to dest. No retries; callers gate this behind an
/// explicit opt-in flag.
inline void fetch_remote(const std::string& url, const std::filesystem::path& dest) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("bad url '" + url + "'");
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ConfigError("unsupported url scheme '" + scheme + "'");
#ifndef DFLAB_HAVE_OPENSSL
    if (scheme == "https") throw NetworkError("built without TLS support; use an http:// url");
#endif
    const auto path_pos = url.find('/', scheme_end + 3);
    const std::string base = path_pos == std::string::npos ? url : url.substr(0, path_pos);
    const std::string path = path_pos == std::string::npos ? "/" : url.substr(path_pos);

    httplib::Client client(base);
    client.set_follow_location(true);
    client.set_connection_timeout(10);
    auto res = client.Get(path);
    if (!res) throw NetworkError("cannot reach " + base + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw NetworkError("HTTP " + std::to_string(res->status) + " fetching " + url);

    std::ofstream out(dest, std::ios::binary);
    if (!out) throw DataError("cannot write " + dest.string());
    out << res->body;
}

} // namespace dflab::dataio
