#include "moss/pipeline/service.hpp"

#include "moss/core/errors.hpp"

#include <httplib.h>

namespace moss::pipeline {

using nlohmann::json;

struct EvolutionService::Impl {
    httplib::Server server;
    std::thread listener;
};

namespace {

void reply_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(2) + "\n", "application/json");
}

void reply_error(httplib::Response& res, const Error& e) {
    int status = 409;
    if (e.code() == ErrorCode::bad_request) status = 400;
    if (e.code() == ErrorCode::unknown_run || e.code() == ErrorCode::unknown_batch) status = 404;
    reply_json(res, status,
               {{"error", {{"code", std::string(code_name(e.code()))}, {"message", e.message()}}}});
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json doc = json::parse(req.body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw Error(ErrorCode::bad_request, "request body must be a JSON object");
    return doc;
}

} // namespace

EvolutionService::EvolutionService(EvolutionEngine& engine, std::string bind_host)
    : engine_(engine), host_(std::move(bind_host)), impl_(std::make_unique<Impl>()) {}

EvolutionService::~EvolutionService() { stop(); }

int EvolutionService::start(int port) {
    auto& server = impl_->server;

    server.Post("/evo/start", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            auto body = parse_body(req);
            std::optional<std::string> batch_id;
            if (body.contains("batch_id")) batch_id = body["batch_id"].get<std::string>();
            auto depth = DepthProfile::named(body.value("depth", "standard"));
            auto run_id = engine_.start_run(batch_id, depth);
            schedule(run_id);
            reply_json(res, 200, {{"run_id", run_id}});
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });

    server.Post("/evo/stop", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            auto body = parse_body(req);
            std::string run_id = body.value("run_id", "");
            if (run_id.empty()) {
                auto active = engine_.active_run_id();
                if (!active) throw Error(ErrorCode::run_not_active, "no active run");
                run_id = *active;
            }
            engine_.stop(run_id);
            reply_json(res, 200, {{"run_id", run_id}, {"stop_requested", true}});
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });

    server.Post("/evo/restart", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            auto body = parse_body(req);
            if (!body.contains("run_id"))
                throw Error(ErrorCode::bad_request, "restart needs run_id");
            auto run_id = engine_.restart(body["run_id"].get<std::string>());
            schedule(run_id);
            reply_json(res, 200, {{"run_id", run_id}});
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });

    server.Post("/evo/apply", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            auto body = parse_body(req);
            std::optional<std::string> batch_id;
            if (body.contains("batch_id")) batch_id = body["batch_id"].get<std::string>();
            reply_json(res, 200, engine_.apply(batch_id));
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });

    server.Get("/evo/status", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            std::optional<std::string> run_id;
            if (req.has_param("run_id")) run_id = req.get_param_value("run_id");
            reply_json(res, 200, engine_.status(run_id));
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });

    server.Get("/evo/batches", [this](const httplib::Request&, httplib::Response& res) {
        try {
            reply_json(res, 200, engine_.batches());
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });

    server.Get(R"(/evo/batch/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            reply_json(res, 200, engine_.batch(req.matches[1]));
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });

    if (port == 0) {
        port_ = server.bind_to_any_port(host_);
    } else {
        if (!server.bind_to_port(host_, port))
            throw Error(ErrorCode::io_failure, "cannot bind evolution service port");
        port_ = port;
    }

    running_ = true;
    worker_ = std::thread([this] { worker_loop(); });
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port_;
}

void EvolutionService::stop() {
    if (!running_) return;
    {
        std::lock_guard<std::mutex> lock(queue_mu_);
        running_ = false;
    }
    queue_cv_.notify_all();
    impl_->server.stop();
    if (worker_.joinable()) worker_.join();
    if (impl_->listener.joinable()) impl_->listener.join();
}

void EvolutionService::schedule(const std::string& run_id) {
    {
        std::lock_guard<std::mutex> lock(queue_mu_);
        queue_.push_back(run_id);
    }
    queue_cv_.notify_one();
}

void EvolutionService::resume_active() {
    if (auto active = engine_.active_run_id()) schedule(*active);
}

void EvolutionService::worker_loop() {
    while (true) {
        std::string run_id;
        {
            std::unique_lock<std::mutex> lock(queue_mu_);
            queue_cv_.wait(lock, [this] { return !running_ || !queue_.empty(); });
            if (!running_ && queue_.empty()) return;
            run_id = queue_.front();
            queue_.erase(queue_.begin());
        }
        try {
            engine_.drive(run_id);
        } catch (...) {
            // drive() already persisted what it could
        }
    }
}

} // namespace moss::pipeline
