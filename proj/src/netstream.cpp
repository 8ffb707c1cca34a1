#include "streambag/netstream.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/prctl.h>
#include <sys/socket.h>
#include <unistd.h>

namespace streambag {

namespace {

[[noreturn]] void throw_errno(const std::string& what) { throw NetworkError(what + ": " + std::strerror(errno)); }

bool wait_fd(int fd, short events, int timeout_ms) {
    pollfd p{fd, events, 0};
    for (;;) {
        int r = ::poll(&p, 1, timeout_ms);
        if (r > 0) return true;
        if (r == 0) return false;
        if (errno != EINTR) throw_errno("poll");
    }
}

std::uint64_t parse_u64_field(std::string_view tok, const char* what) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw ProtocolError(std::string("bad ") + what + " field");
    return v;
}

std::int64_t parse_i64_field(std::string_view tok, const char* what) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw ProtocolError(std::string("bad ") + what + " field");
    return v;
}

}  // namespace

std::string encode_frame(std::string_view payload) {
    if (payload.size() > max_frame_length) throw ProtocolError("frame payload too large");
    auto n = static_cast<std::uint32_t>(payload.size());
    std::string out;
    out.reserve(4 + payload.size());
    out.push_back(static_cast<char>((n >> 24) & 0xff));
    out.push_back(static_cast<char>((n >> 16) & 0xff));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
    out.append(payload);
    return out;
}

std::string encode_terminator() { return std::string(4, '\0'); }

std::string format_instance_payload(const Schema& schema, std::uint64_t seq, std::int64_t sent_at_ns, const Instance& inst) {
    return std::to_string(seq) + "," + std::to_string(sent_at_ns) + "," + format_row(schema, inst);
}

StreamRecord parse_instance_payload(const Schema& schema, std::string_view payload) {
    auto c1 = payload.find(',');
    if (c1 == std::string_view::npos) throw ProtocolError("instance frame without seq field");
    auto c2 = payload.find(',', c1 + 1);
    if (c2 == std::string_view::npos) throw ProtocolError("instance frame without timestamp field");
    StreamRecord rec;
    rec.seq = parse_u64_field(payload.substr(0, c1), "seq");
    rec.sent_at_ns = parse_i64_field(payload.substr(c1 + 1, c2 - c1 - 1), "timestamp");
    rec.instance = parse_row(schema, payload.substr(c2 + 1), rec.seq + 1);
    return rec;
}

std::size_t MemoryByteSource::read_some(std::span<char> buf) {
    std::size_t n = std::min(buf.size(), data_.size() - pos_);
    std::memcpy(buf.data(), data_.data() + pos_, n);
    pos_ += n;
    return n;
}

std::size_t FdByteSource::read_some(std::span<char> buf) {
    for (;;) {
        ssize_t r = ::read(fd_, buf.data(), buf.size());
        if (r >= 0) return static_cast<std::size_t>(r);
        if (errno == EINTR) continue;
        if (errno == ECONNRESET) return 0;
        throw_errno("read");
    }
}

bool FrameReader::fill(std::size_t n) {
    while (buffer_.size() - begin_ < n) {
        if (begin_ > 0 && begin_ == buffer_.size()) {
            buffer_.clear();
            begin_ = 0;
        }
        std::size_t old = buffer_.size();
        buffer_.resize(old + std::max<std::size_t>(65536, n));
        std::size_t got = source_.read_some(std::span<char>(buffer_.data() + old, buffer_.size() - old));
        buffer_.resize(old + got);
        if (got == 0) return false;
    }
    return true;
}

std::optional<std::string> FrameReader::next() {
    if (!fill(4)) {
        if (buffer_.size() == begin_) throw ProtocolError("connection closed before end-of-stream frame");
        throw ProtocolError("truncated frame header");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + begin_);
    std::uint32_t len = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
    if (len > max_frame_length) throw ProtocolError("frame length " + std::to_string(len) + " exceeds limit");
    begin_ += 4;
    if (len == 0) return std::nullopt;
    if (!fill(len)) throw ProtocolError("truncated frame payload");
    std::string payload(buffer_.data() + begin_, len);
    begin_ += len;
    if (begin_ == buffer_.size()) {
        buffer_.clear();
        begin_ = 0;
    }
    return payload;
}

StreamDecoder::StreamDecoder(ByteSource& source) : frames_(source) {
    auto handshake = frames_.next();
    if (!handshake) throw ProtocolError("stream ended before the handshake");
    try {
        schema_ = parse_arff_header(*handshake);
    } catch (const ParseError& e) {
        throw ProtocolError(std::string("handshake: ") + e.what());
    }
}

std::optional<StreamRecord> StreamDecoder::next() {
    auto payload = frames_.next();
    if (!payload) return std::nullopt;
    StreamRecord rec;
    try {
        rec = parse_instance_payload(schema_, *payload);
    } catch (const ParseError& e) {
        throw ProtocolError(std::string("record: ") + e.what());
    }
    rec.received_at_ns = monotonic_ns();
    if (rec.seq != expected_seq_) {
        throw ProtocolError("out-of-order seq " + std::to_string(rec.seq) + ", expected " + std::to_string(expected_seq_));
    }
    ++expected_seq_;
    return rec;
}

Socket::~Socket() { close(); }

Socket& Socket::operator=(Socket&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
}

void Socket::shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Endpoint Endpoint::parse(std::string_view host_port) {
    auto colon = host_port.rfind(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("expected HOST:PORT, got '" + std::string(host_port) + "'");
    Endpoint e;
    e.host = std::string(host_port.substr(0, colon));
    if (e.host.empty()) e.host = "127.0.0.1";
    auto port = host_port.substr(colon + 1);
    unsigned v = 0;
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), v);
    if (ec != std::errc{} || ptr != port.data() + port.size() || v > 65535) {
        throw std::invalid_argument("bad port in '" + std::string(host_port) + "'");
    }
    e.port = static_cast<std::uint16_t>(v);
    return e;
}

namespace {

sockaddr_in resolve(const Endpoint& e) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(e.port);
    if (::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) == 1) return addr;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
        throw NetworkError("cannot resolve host '" + e.host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
}

}  // namespace

Listener::Listener(const Endpoint& at) {
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw_errno("socket");
    socket_ = Socket(fd);
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = resolve(at);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) throw_errno("bind " + at.str());
    if (::listen(fd, 4) != 0) throw_errno("listen");
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

Socket Listener::accept(std::optional<std::chrono::milliseconds> timeout) {
    if (timeout && !wait_fd(socket_.fd(), POLLIN, static_cast<int>(timeout->count()))) {
        throw NetworkError("timed out waiting for a connection");
    }
    for (;;) {
        int fd = ::accept4(socket_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd >= 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Socket(fd);
        }
        if (errno != EINTR) throw_errno("accept");
    }
}

Socket connect_to(const Endpoint& to, std::chrono::milliseconds timeout) {
    sockaddr_in addr = resolve(to);
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0);
    if (fd < 0) throw_errno("socket");
    Socket sock(fd);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        if (errno != EINPROGRESS) throw_errno("connect " + to.str());
        if (!wait_fd(fd, POLLOUT, static_cast<int>(timeout.count()))) throw NetworkError("connect " + to.str() + ": timed out");
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            errno = err;
            throw_errno("connect " + to.str());
        }
    }
    int flags = ::fcntl(fd, F_GETFL);
    ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return sock;
}

bool send_all(int fd, std::string_view data) {
    bool blocked = false;
    while (!data.empty()) {
        ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
        if (n > 0) {
            data.remove_prefix(static_cast<std::size_t>(n));
            continue;
        }
        if (n < 0 && errno == EINTR) continue;
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
            blocked = true;
            wait_fd(fd, POLLOUT, -1);
            continue;
        }
        throw_errno("send");
    }
    return blocked;
}

TokenBucket::TokenBucket(double rate, double capacity, std::int64_t now_ns)
    : rate_(rate), capacity_(capacity), tokens_(capacity), last_ns_(now_ns) {
    if (!(rate > 0.0)) throw std::invalid_argument("rate must be positive");
    if (!(capacity >= 1.0)) throw std::invalid_argument("bucket capacity must be at least one token");
}

void TokenBucket::refill(std::int64_t now_ns) {
    if (now_ns > last_ns_) {
        tokens_ = std::min(capacity_, tokens_ + static_cast<double>(now_ns - last_ns_) * 1e-9 * rate_);
        last_ns_ = now_ns;
    }
}

std::int64_t TokenBucket::wait_ns(std::int64_t now_ns) {
    refill(now_ns);
    if (tokens_ >= 1.0) return 0;
    return static_cast<std::int64_t>(std::ceil((1.0 - tokens_) / rate_ * 1e9));
}

bool TokenBucket::try_take(std::int64_t now_ns) {
    refill(now_ns);
    if (tokens_ < 1.0) return false;
    tokens_ -= 1.0;
    return true;
}

void TokenBucket::acquire() {
    std::int64_t now = monotonic_ns();
    if (try_take(now)) return;
    // The token is taken at the instant it became available, so a late wakeup
    // does not push the next refill back. The level still never exceeds the
    // capacity.
    const std::int64_t ready = now + wait_ns(now);
    while ((now = monotonic_ns()) < ready) std::this_thread::sleep_for(std::chrono::nanoseconds(ready - now));
    last_ns_ = ready;
    tokens_ = 0.0;
    refill(now);
}

SendLog generate_load(int fd, const Schema& schema, std::span<const Instance> instances, const LoadOptions& options) {
    // Default 50us timer slack would stretch every paced gap.
    struct SlackGuard {
        int old = ::prctl(PR_GET_TIMERSLACK);
        SlackGuard() { ::prctl(PR_SET_TIMERSLACK, 1UL); }
        ~SlackGuard() {
            if (old > 0) ::prctl(PR_SET_TIMERSLACK, static_cast<unsigned long>(old));
        }
    } slack;
    SendLog log;
    log.started_ns = monotonic_ns();
    send_all(fd, encode_frame(format_arff_header(schema)));
    std::optional<TokenBucket> bucket;
    // One token, or 2 ms worth at high rates so a stalled wakeup is made up
    // instead of lost.
    if (options.rate) bucket.emplace(*options.rate, std::max(1.0, *options.rate * 0.002), monotonic_ns());
    const std::int64_t end_ns =
        options.duration ? log.started_ns + options.duration->count() : std::numeric_limits<std::int64_t>::max();
    std::uint64_t seq = 0;
    std::string frame;
    while (!instances.empty()) {
        if (options.count && seq >= *options.count) break;
        if (options.stop && options.stop->load(std::memory_order_relaxed)) break;
        if (bucket) {
            std::int64_t now = monotonic_ns();
            std::int64_t wait = bucket->wait_ns(now);
            if (now + wait >= end_ns) break;
            bucket->acquire();
        }
        std::int64_t now = monotonic_ns();
        if (now >= end_ns) break;
        std::size_t row = static_cast<std::size_t>(seq % instances.size());
        frame = encode_frame(format_instance_payload(schema, seq, now, instances[row]));
        bool blocked = send_all(fd, frame);
        log.entries.push_back(SendEntry{seq, now, row, blocked});
        if (blocked) ++log.backpressure_events;
        ++seq;
    }
    send_all(fd, encode_terminator());
    log.terminated = true;
    log.finished_ns = monotonic_ns();
    return log;
}

void write_send_log(std::ostream& out, const SendLog& log) {
    out << "seq,sent_at_ns,row,backpressure\n";
    for (const auto& e : log.entries) out << e.seq << ',' << e.sent_at_ns << ',' << e.row << ',' << (e.backpressure ? 1 : 0) << '\n';
}

StreamReceiver::StreamReceiver(Socket socket, std::size_t queue_capacity)
    : socket_(std::move(socket)), bytes_(socket_.fd()), decoder_(bytes_), queue_(queue_capacity) {
    reader_ = std::thread([this] { reader_loop(); });
}

StreamReceiver::~StreamReceiver() {
    queue_.close();
    ::shutdown(socket_.fd(), SHUT_RDWR);
    if (reader_.joinable()) reader_.join();
}

void StreamReceiver::reader_loop() {
    try {
        while (auto rec = decoder_.next()) {
            received_.fetch_add(1, std::memory_order_relaxed);
            if (!queue_.push(std::move(*rec))) return;
        }
        queue_.close();
    } catch (...) {
        queue_.close(std::current_exception());
    }
}

RecordSource::Status StreamReceiver::next(StreamRecord& out, std::optional<std::int64_t> deadline_ns) {
    switch (queue_.pop(out, deadline_ns)) {
        case BoundedQueue<StreamRecord>::PopResult::item: return Status::record;
        case BoundedQueue<StreamRecord>::PopResult::closed: return Status::end;
        case BoundedQueue<StreamRecord>::PopResult::timeout: return Status::timeout;
    }
    return Status::end;
}

double steady_state_rate(const SendLog& log) {
    if (log.entries.empty()) return 0.0;
    const std::int64_t start = log.started_ns;
    const std::int64_t end = std::max(log.finished_ns, log.entries.back().sent_at_ns);
    const std::int64_t from = start + (end - start) / 3;
    if (end <= from) return 0.0;
    auto count = std::count_if(log.entries.begin(), log.entries.end(), [&](const SendEntry& e) { return e.sent_at_ns >= from; });
    return static_cast<double>(count) / (static_cast<double>(end - from) * 1e-9);
}

double calibrate_capacity(const Endpoint& processor, const Schema& schema, std::span<const Instance> instances,
                          const CalibrationOptions& options) {
    if (options.warmup.count() <= 0) throw std::invalid_argument("calibration needs a positive warmup window");
    if (instances.empty()) throw std::invalid_argument("calibration needs a non-empty dataset");
    Socket sock = connect_to(processor);
    LoadOptions load;
    load.duration = options.warmup;
    SendLog log = generate_load(sock.fd(), schema, instances, load);
    double ips = steady_state_rate(log);
    if (ips < 1.0) throw std::runtime_error("calibration: processor consumed fewer than 1 instance per second");
    return ips;
}

}  // namespace streambag
