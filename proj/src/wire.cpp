#include "vitcx/wire.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include <chrono>

#include "vitcx/error.hpp"
#include "vitcx/raw_io.hpp"
#include "vitcx/toy_vit.hpp"

extern char** environ;

namespace vitcx {

using nlohmann::json;

namespace {

std::string errno_text() { return std::strerror(errno); }

void write_all(int fd, const std::uint8_t* data, std::size_t len) {
    while (len > 0) {
        const ssize_t n = ::write(fd, data, len);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError("write failed: " + errno_text());
        }
        data += n;
        len -= static_cast<std::size_t>(n);
    }
}

// Returns false on end of stream before any byte was read.
bool read_all(int fd, std::uint8_t* data, std::size_t len) {
    std::size_t got = 0;
    while (got < len) {
        const ssize_t n = ::read(fd, data + got, len - got);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError("read failed: " + errno_text());
        }
        if (n == 0) {
            if (got == 0) return false;
            throw ProtocolError("stream ended inside a frame");
        }
        got += static_cast<std::size_t>(n);
    }
    return true;
}

json shape_json(const Tensor3& t) { return json::array({t.height(), t.width(), t.channels()}); }

}  // namespace

void FrameChannel::write_frame(std::span<const std::uint8_t> payload) {
    if (payload.size() > kMaxFrameBytes) throw ProtocolError("frame too large");
    std::vector<std::uint8_t> header;
    append_u32_le(header, static_cast<std::uint32_t>(payload.size()));
    write_all(write_fd_, header.data(), header.size());
    if (!payload.empty()) write_all(write_fd_, payload.data(), payload.size());
}

void FrameChannel::write_json(const json& message) {
    const std::string text = message.dump();
    write_frame({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void FrameChannel::write_floats(std::span<const float> values) {
    std::vector<std::uint8_t> payload;
    append_f32_le(payload, values);
    write_frame(payload);
}

std::optional<std::vector<std::uint8_t>> FrameChannel::read_frame() {
    std::uint8_t header[4];
    if (!read_all(read_fd_, header, 4)) return std::nullopt;
    const std::uint32_t len = read_u32_le(header);
    if (len > kMaxFrameBytes) throw ProtocolError("frame length " + std::to_string(len) + " exceeds limit");
    std::vector<std::uint8_t> payload(len);
    if (len > 0 && !read_all(read_fd_, payload.data(), len)) throw ProtocolError("stream ended inside a frame");
    return payload;
}

std::vector<std::uint8_t> FrameChannel::read_frame_or_throw() {
    auto frame = read_frame();
    if (!frame) throw ProtocolError("connection closed by peer");
    return std::move(*frame);
}

json FrameChannel::read_json() {
    const auto payload = read_frame_or_throw();
    try {
        return json::parse(payload.begin(), payload.end());
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed JSON frame: ") + e.what());
    }
}

std::vector<float> FrameChannel::read_floats(std::size_t expected_count) {
    auto values = read_f32_le(read_frame_or_throw());
    if (values.size() != expected_count) {
        throw ProtocolError("tensor frame holds " + std::to_string(values.size()) + " values, expected " +
                            std::to_string(expected_count));
    }
    return values;
}

json info_to_json(const OracleInfo& info) {
    json blocks = json::array();
    for (const auto& b : info.available_blocks) {
        blocks.push_back({{"block_index", b.block_index}, {"grid_side", b.grid_side}, {"dim", b.dim}});
    }
    return {{"input_height", info.input_height},
            {"input_width", info.input_width},
            {"channels", info.channels},
            {"num_classes", info.num_classes},
            {"available_blocks", blocks},
            {"score_semantics", std::string(to_string(info.score_semantics))}};
}

OracleInfo info_from_json(const json& j) {
    try {
        OracleInfo info;
        info.input_height = j.at("input_height").get<int>();
        info.input_width = j.at("input_width").get<int>();
        info.channels = j.at("channels").get<int>();
        info.num_classes = j.at("num_classes").get<int>();
        for (const auto& b : j.at("available_blocks")) {
            info.available_blocks.push_back(
                {b.at("block_index").get<int>(), b.at("grid_side").get<int>(), b.at("dim").get<int>()});
        }
        info.score_semantics = parse_score_semantics(j.value("score_semantics", std::string("softmax")));
        info.validate();
        return info;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed oracle info: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ProtocolError(std::string("invalid oracle info: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Transports

namespace {

class SubprocessTransport : public Transport {
public:
    explicit SubprocessTransport(std::string command) : command_(std::move(command)) {
        // A dead child must surface as a write error, not kill this process.
        std::signal(SIGPIPE, SIG_IGN);

        int to_child[2];
        int from_child[2];
        if (::pipe(to_child) != 0) throw OracleError("pipe failed: " + errno_text());
        if (::pipe(from_child) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw OracleError("pipe failed: " + errno_text());
        }

        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
        posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);
        posix_spawn_file_actions_addclose(&actions, to_child[1]);
        posix_spawn_file_actions_addclose(&actions, from_child[0]);

        std::string sh = "/bin/sh";
        std::string flag = "-c";
        char* argv[] = {sh.data(), flag.data(), command_.data(), nullptr};
        const int rc = posix_spawn(&pid_, "/bin/sh", &actions, nullptr, argv, environ);
        posix_spawn_file_actions_destroy(&actions);
        ::close(to_child[0]);
        ::close(from_child[1]);
        if (rc != 0) {
            ::close(to_child[1]);
            ::close(from_child[0]);
            throw OracleError("cannot spawn '" + command_ + "': " + std::strerror(rc));
        }
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
        channel_.emplace(read_fd_, write_fd_);
    }

    ~SubprocessTransport() override {
        if (write_fd_ >= 0) ::close(write_fd_);
        if (read_fd_ >= 0) ::close(read_fd_);
        if (pid_ <= 0) return;
        using clock = std::chrono::steady_clock;
        const auto deadline = clock::now() + std::chrono::seconds(5);
        int status = 0;
        while (::waitpid(pid_, &status, WNOHANG) == 0) {
            if (clock::now() > deadline) {
                ::kill(pid_, SIGKILL);
                ::waitpid(pid_, &status, 0);
                break;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
    }

    FrameChannel& channel() override { return *channel_; }
    std::string describe() const override { return "subprocess '" + command_ + "'"; }

private:
    std::string command_;
    pid_t pid_ = -1;
    int read_fd_ = -1;
    int write_fd_ = -1;
    std::optional<FrameChannel> channel_;
};

class TcpTransport : public Transport {
public:
    TcpTransport(const std::string& host, int port) : endpoint_(host + ":" + std::to_string(port)) {
        std::signal(SIGPIPE, SIG_IGN);
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* found = nullptr;
        const std::string service = std::to_string(port);
        if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &found); rc != 0) {
            throw OracleError("cannot resolve " + endpoint_ + ": " + ::gai_strerror(rc));
        }
        for (addrinfo* a = found; a != nullptr; a = a->ai_next) {
            const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
                fd_ = fd;
                break;
            }
            ::close(fd);
        }
        ::freeaddrinfo(found);
        if (fd_ < 0) throw OracleError("cannot connect to " + endpoint_);
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        channel_.emplace(fd_, fd_);
    }

    ~TcpTransport() override {
        if (fd_ >= 0) ::close(fd_);
    }

    FrameChannel& channel() override { return *channel_; }
    std::string describe() const override { return "tcp " + endpoint_; }

private:
    std::string endpoint_;
    int fd_ = -1;
    std::optional<FrameChannel> channel_;
};

}  // namespace

std::unique_ptr<Transport> spawn_subprocess(const std::string& command) {
    return std::make_unique<SubprocessTransport>(command);
}

std::unique_ptr<Transport> connect_tcp(const std::string& host, int port) {
    return std::make_unique<TcpTransport>(host, port);
}

// ---------------------------------------------------------------------------
// Client

WireOracle::WireOracle(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {
    const json reply = request({{"op", "hello"}}, {});
    info_ = info_from_json(reply.at("info"));
}

void WireOracle::check_open() const {
    if (broken_) throw ProtocolError("oracle connection is no longer usable");
    if (!transport_) throw OracleError("oracle not initialized");
}

json WireOracle::request(json message, std::span<const Tensor3> tensors) {
    check_open();
    const std::int64_t id = next_id_++;
    message["id"] = id;
    try {
        auto& ch = transport_->channel();
        ch.write_json(message);
        for (const auto& t : tensors) ch.write_floats(t.values());
        return receive_reply(id);
    } catch (const ProtocolError&) {
        broken_ = true;
        throw;
    }
}

json WireOracle::receive_reply(std::int64_t id) {
    json reply = transport_->channel().read_json();
    if (!reply.is_object()) throw ProtocolError("reply is not a JSON object");
    if (reply.value("id", std::int64_t{-1}) != id) throw ProtocolError("reply id does not match request id");
    if (reply.contains("error")) {
        throw OracleError(transport_->describe() + ": " + reply["error"].get<std::string>());
    }
    return reply;
}

OracleInfo WireOracle::info() {
    check_open();
    return *info_;
}

EmbeddingBlock WireOracle::embeddings(const Image& image, int block_index) {
    const Tensor3 tensors[] = {image.tensor()};
    const json reply =
        request({{"op", "embed"}, {"block_index", block_index}, {"shape", shape_json(image.tensor())}}, tensors);
    try {
        const auto shape = reply.at("shape").get<std::vector<int>>();
        if (shape.size() != 2 || shape[0] < 1 || shape[1] < 1) throw ProtocolError("embed reply shape must be [N, D]");
        auto values = transport_->channel().read_floats(static_cast<std::size_t>(shape[0]) * shape[1]);
        return EmbeddingBlock(shape[0], shape[1], block_index, std::move(values));
    } catch (const json::exception& e) {
        broken_ = true;
        throw ProtocolError(std::string("malformed embed reply: ") + e.what());
    } catch (const ProtocolError&) {
        broken_ = true;
        throw;
    }
}

std::vector<double> WireOracle::scores_for(std::span<const Tensor3> images, int target, std::size_t per_image) {
    check_open();
    check_batch_geometry(*info_, images);
    if (images.empty()) return {};
    const json reply = request({{"op", "score"},
                                {"target", target},
                                {"batch", images.size()},
                                {"shape", shape_json(images.front())}},
                               images);
    try {
        const auto values = transport_->channel().read_floats(images.size() * per_image);
        return std::vector<double>(values.begin(), values.end());
    } catch (const ProtocolError&) {
        broken_ = true;
        throw;
    }
}

std::vector<double> WireOracle::score_batch(std::span<const Tensor3> images, int target) {
    if (target < 0) throw InvalidArgument("target class must be >= 0");
    return scores_for(images, target, 1);
}

std::vector<ScoreVector> WireOracle::predict_batch(std::span<const Tensor3> images) {
    const auto k = static_cast<std::size_t>(info_ ? info_->num_classes : 0);
    const auto flat = scores_for(images, -1, k);
    std::vector<ScoreVector> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        ScoreVector sv;
        sv.scores.assign(flat.begin() + static_cast<std::ptrdiff_t>(i * k),
                         flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
        sv.target_class = sv.top1();
        out.push_back(std::move(sv));
    }
    return out;
}

std::unique_ptr<ModelOracle> make_oracle(const std::string& spec) {
    if (spec == "builtin-toy") return std::make_unique<ToyViTOracle>();
    if (spec.rfind("subprocess:", 0) == 0) {
        const std::string command = spec.substr(std::string("subprocess:").size());
        if (command.empty()) throw InvalidArgument("subprocess oracle needs a command");
        return std::make_unique<WireOracle>(spawn_subprocess(command));
    }
    if (spec.rfind("tcp:", 0) == 0) {
        const std::string endpoint = spec.substr(4);
        const auto colon = endpoint.rfind(':');
        if (colon == std::string::npos || colon == 0) throw InvalidArgument("tcp oracle spec must be tcp:<host>:<port>");
        int port = 0;
        try {
            port = std::stoi(endpoint.substr(colon + 1));
        } catch (const std::exception&) {
            throw InvalidArgument("invalid tcp port in '" + spec + "'");
        }
        return std::make_unique<WireOracle>(connect_tcp(endpoint.substr(0, colon), port));
    }
    throw InvalidArgument("unknown oracle spec '" + spec + "'");
}

// ---------------------------------------------------------------------------
// Server

namespace {

Tensor3 tensor_from(const json& shape, std::vector<float> values) {
    const auto dims = shape.get<std::vector<int>>();
    if (dims.size() != 3) throw InvalidArgument("image shape must be [H, W, C]");
    return Tensor3(dims[0], dims[1], dims[2], std::move(values));
}

std::size_t shape_count(const json& shape) {
    const auto dims = shape.get<std::vector<int>>();
    if (dims.size() != 3 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
        throw InvalidArgument("image shape must be [H, W, C] with positive entries");
    }
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
}

// Reads the follow-on tensor frames of a request before anything can fail,
// so the stream stays aligned when the request is rejected.
std::vector<std::vector<std::uint8_t>> drain_payload(FrameChannel& channel, const json& msg) {
    std::size_t frames = 0;
    const std::string op = msg.value("op", "");
    if (op == "embed") {
        frames = 1;
    } else if (op == "score") {
        const auto it = msg.find("batch");
        if (it != msg.end() && it->is_number_integer() && it->get<std::int64_t>() > 0) {
            frames = static_cast<std::size_t>(it->get<std::int64_t>());
        }
    }
    std::vector<std::vector<std::uint8_t>> out;
    out.reserve(frames);
    for (std::size_t i = 0; i < frames; ++i) out.push_back(channel.read_frame_or_throw());
    return out;
}

std::vector<float> decode_tensor(const std::vector<std::uint8_t>& frame, std::size_t expected) {
    auto values = read_f32_le(frame);
    if (values.size() != expected) throw InvalidArgument("tensor frame does not match declared shape");
    return values;
}

}  // namespace

void serve(ModelOracle& oracle, FrameChannel& channel) {
    for (;;) {
        const auto frame = channel.read_frame();
        if (!frame) return;

        json msg;
        try {
            msg = json::parse(frame->begin(), frame->end());
        } catch (const json::exception& e) {
            channel.write_json({{"id", nullptr}, {"error", std::string("malformed JSON: ") + e.what()}});
            continue;
        }
        const json id = msg.is_object() && msg.contains("id") ? msg["id"] : json(nullptr);
        std::vector<std::vector<std::uint8_t>> payload;
        if (msg.is_object()) payload = drain_payload(channel, msg);

        json reply;
        std::vector<float> result;
        try {
            if (!msg.is_object()) throw InvalidArgument("request must be a JSON object");
            const std::string op = msg.at("op").get<std::string>();
            if (op == "hello") {
                reply = {{"id", id}, {"info", info_to_json(oracle.info())}};
            } else if (op == "embed") {
                const int block = msg.at("block_index").get<int>();
                const Image image(tensor_from(msg.at("shape"), decode_tensor(payload.at(0), shape_count(msg.at("shape")))));
                const EmbeddingBlock emb = oracle.embeddings(image, block);
                reply = {{"id", id}, {"block_index", block}, {"shape", {emb.num_patches(), emb.dim()}}};
                result.assign(emb.values().begin(), emb.values().end());
            } else if (op == "score") {
                const int target = msg.at("target").get<int>();
                const auto batch = msg.at("batch").get<std::int64_t>();
                if (batch < 0) throw InvalidArgument("batch must be >= 0");
                const std::size_t count = shape_count(msg.at("shape"));
                std::vector<Tensor3> images;
                images.reserve(payload.size());
                for (const auto& f : payload) images.push_back(tensor_from(msg.at("shape"), decode_tensor(f, count)));
                if (target < 0) {
                    const auto preds = oracle.predict_batch(images);
                    const int k = oracle.info().num_classes;
                    for (const auto& p : preds) {
                        for (double s : p.scores) result.push_back(static_cast<float>(s));
                    }
                    reply = {{"id", id}, {"shape", {static_cast<int>(images.size()), k}}};
                } else {
                    for (double s : oracle.score_batch(images, target)) result.push_back(static_cast<float>(s));
                    reply = {{"id", id}, {"shape", {static_cast<int>(images.size())}}};
                }
            } else {
                throw InvalidArgument("unknown op '" + op + "'");
            }
        } catch (const json::exception& e) {
            reply = {{"id", id}, {"error", std::string("bad request: ") + e.what()}};
            result.clear();
        } catch (const std::exception& e) {
            reply = {{"id", id}, {"error", e.what()}};
            result.clear();
        }

        channel.write_json(reply);
        if (!reply.contains("error") && reply.contains("shape")) channel.write_floats(result);
    }
}

TcpServer::TcpServer(const std::string& host, int port) {
    std::signal(SIGPIPE, SIG_IGN);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw IoError("socket failed: " + errno_text());
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw InvalidArgument("listen host must be an IPv4 address: " + host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 16) != 0) {
        const std::string why = errno_text();
        ::close(listen_fd_);
        throw IoError("cannot listen on " + host + ":" + std::to_string(port) + ": " + why);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpServer::run(const std::function<std::unique_ptr<ModelOracle>()>& factory, std::size_t max_connections) {
    std::vector<std::thread> workers;
    for (std::size_t accepted = 0; max_connections == 0 || accepted < max_connections; ++accepted) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            throw IoError("accept failed: " + errno_text());
        }
        workers.emplace_back([fd, &factory] {
            try {
                auto oracle = factory();
                FrameChannel channel(fd, fd);
                serve(*oracle, channel);
            } catch (const std::exception&) {
                // Connection-level failure; the peer sees the socket close.
            }
            ::close(fd);
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace vitcx
