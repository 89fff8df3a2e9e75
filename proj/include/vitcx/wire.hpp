#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitcx/oracle.hpp"

namespace vitcx {

// Frames are a u32 little-endian payload length followed by the payload.
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

// Reads and writes frames over a pair of file descriptors (the same socket
// twice for TCP). Does not own the descriptors.
class FrameChannel {
public:
    FrameChannel(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}

    void write_frame(std::span<const std::uint8_t> payload);
    void write_json(const nlohmann::json& message);
    void write_floats(std::span<const float> values);

    // nullopt on a clean end of stream before the length prefix.
    std::optional<std::vector<std::uint8_t>> read_frame();
    std::vector<std::uint8_t> read_frame_or_throw();
    nlohmann::json read_json();
    std::vector<float> read_floats(std::size_t expected_count);

private:
    int read_fd_;
    int write_fd_;
};

nlohmann::json info_to_json(const OracleInfo& info);
OracleInfo info_from_json(const nlohmann::json& j);

// Owns the process or socket behind a FrameChannel.
class Transport {
public:
    virtual ~Transport() = default;
    virtual FrameChannel& channel() = 0;
    virtual std::string describe() const = 0;
};

// Spawns `/bin/sh -c command` with its stdin/stdout connected to pipes.
std::unique_ptr<Transport> spawn_subprocess(const std::string& command);
std::unique_ptr<Transport> connect_tcp(const std::string& host, int port);

// Client side of the oracle wire protocol. Performs the hello handshake on
// construction; one outstanding request at a time.
class WireOracle : public ModelOracle {
public:
    explicit WireOracle(std::unique_ptr<Transport> transport);

    OracleInfo info() override;
    EmbeddingBlock embeddings(const Image& image, int block_index) override;
    std::vector<double> score_batch(std::span<const Tensor3> images, int target) override;
    std::vector<ScoreVector> predict_batch(std::span<const Tensor3> images) override;

private:
    nlohmann::json request(nlohmann::json message, std::span<const Tensor3> tensors);
    nlohmann::json receive_reply(std::int64_t id);
    std::vector<double> scores_for(std::span<const Tensor3> images, int target, std::size_t per_image);
    void check_open() const;

    std::unique_ptr<Transport> transport_;
    std::optional<OracleInfo> info_;
    std::int64_t next_id_ = 1;
    bool broken_ = false;
};

// Builds an oracle from "builtin-toy", "subprocess:<command>" or
// "tcp:<host>:<port>".
std::unique_ptr<ModelOracle> make_oracle(const std::string& spec);

// Answers requests from `channel` with `oracle` until the peer closes the
// stream. Malformed requests get an error reply; the loop keeps going as
// long as framing is intact.
void serve(ModelOracle& oracle, FrameChannel& channel);

// Accepts TCP connections and serves each one on its own thread with a fresh
// oracle from `factory`.
class TcpServer {
public:
    TcpServer(const std::string& host, int port);
    ~TcpServer();
    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    int port() const { return port_; }

    // Serves until `max_connections` connections have finished (0: forever).
    void run(const std::function<std::unique_ptr<ModelOracle>()>& factory, std::size_t max_connections = 0);

private:
    int listen_fd_ = -1;
    int port_ = 0;
};

}  // namespace vitcx
