#pragma once

#include <cstddef>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "bodygps/tasks.hpp"

namespace httplib {
class Server;
}

namespace bodygps {

struct ServiceConfig {
    std::size_t max_sessions = 8;
    std::size_t max_upload_bytes = std::size_t{1} << 30;
    /// Upper bound on navigation iterations per landmark request.
    int max_navigation_iters = 50;
    double navigation_tol_mm = 0.1;
};

struct Session {
    std::string id;
    std::shared_ptr<const Volume> volume;
    std::int64_t created_unix_ms = 0;
};

/// In-memory sessions with least-recently-used eviction. Thread-safe.
class SessionTable {
public:
    explicit SessionTable(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

    Session create(std::shared_ptr<const Volume> volume);
    /// nullptr when unknown or evicted. Marks the session as recently used.
    std::shared_ptr<const Session> find(const std::string& id);
    std::size_t size() const;

private:
    std::size_t capacity_;
    std::uint64_t next_ = 1;
    mutable std::mutex mutex_;
    std::list<std::shared_ptr<const Session>> order_;  // most recent first
    std::unordered_map<std::string, std::list<std::shared_ptr<const Session>>::iterator> index_;
};

/// HTTP facade over one Engine:
///   POST /volumes, GET /volumes/{id}/slice, POST /volumes/{id}/query,
///   POST /volumes/{id}/landmark, GET /atlas.
class Service {
public:
    Service(std::shared_ptr<const Engine> engine, ServiceConfig config = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and serves until stop(); returns false when binding fails.
    bool listen(const std::string& host, int port);
    /// Binds an OS-chosen port and returns it (or -1); serve with listen_after_bind().
    int bind_any_port(const std::string& host);
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

    SessionTable& sessions() { return sessions_; }

private:
    void install_routes();

    std::shared_ptr<const Engine> engine_;
    ServiceConfig config_;
    SessionTable sessions_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace bodygps
