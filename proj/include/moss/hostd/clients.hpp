#pragma once

#include "moss/hostd/images.hpp"
#include "moss/hostd/rpc.hpp"
#include "moss/runners/runner.hpp"

#include <filesystem>

namespace moss::hostd {

// runner.* family client: routes the four-method interface through the
// host-daemon, which owns the subprocess.
class RpcRunner final : public runners::Runner {
public:
    RpcRunner(std::filesystem::path socket, std::string provider)
        : client_(std::move(socket)), provider_(std::move(provider)) {}

    std::string name() const override { return provider_; }

    runners::InvocationPlan prepare(const runners::RunnerSpec& spec) override {
        auto forwarded = spec;
        forwarded.provider = provider_;
        auto result = client_.call("runner.prepare", {{"spec", forwarded.to_json()}});
        return runners::InvocationPlan::from_json(result.at("plan"));
    }

    runners::RunnerHandle launch(const runners::InvocationPlan& plan) override {
        auto result = client_.call("runner.launch", {{"plan", plan.to_json()}});
        return runners::RunnerHandle::from_json(result.at("handle"));
    }

    runners::StageOutput collect(runners::RunnerHandle& handle) override {
        auto result = client_.call("runner.collect", {{"invocation_id", handle.invocation_id}});
        auto output = runners::StageOutput::from_json(result.at("output"));
        handle.state = output.final_state;
        return output;
    }

    void cancel(runners::RunnerHandle& handle) override {
        client_.call("runner.cancel", {{"invocation_id", handle.invocation_id}});
        handle.state = runners::HandleState::cancelled;
    }

private:
    RpcClient client_;
    std::string provider_;
};

// image.* family client.
class RpcImageBuilder final : public ImageBuilder {
public:
    explicit RpcImageBuilder(std::filesystem::path socket) : client_(std::move(socket)) {}

    ImageRef build(const std::filesystem::path& workspace_path, const std::string& rev) override {
        auto result = client_.call(
            "image.build", {{"workspace_path", workspace_path.string()}, {"rev", rev}});
        return ImageRef::from_json(result.at("image"));
    }

private:
    RpcClient client_;
};

} // namespace moss::hostd
