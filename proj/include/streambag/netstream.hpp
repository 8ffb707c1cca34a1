#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "streambag/core.hpp"
#include "streambag/executor.hpp"

namespace streambag {

// Wire format: 32-bit big-endian length, then that many bytes of UTF-8.
// Length 0 terminates the stream. The first frame carries the ARFF header,
// every later frame one row prefixed by "seq,send_timestamp_ns,".
inline constexpr std::uint32_t max_frame_length = 1u << 24;

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NetworkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string encode_frame(std::string_view payload);
std::string encode_terminator();
std::string format_instance_payload(const Schema& schema, std::uint64_t seq, std::int64_t sent_at_ns, const Instance& inst);
// Throws ProtocolError (bad prefix) or RecordError (bad row).
StreamRecord parse_instance_payload(const Schema& schema, std::string_view payload);

class ByteSource {
public:
    virtual ~ByteSource() = default;
    // Reads up to `buf.size()` bytes; returns 0 only at end of input.
    virtual std::size_t read_some(std::span<char> buf) = 0;
};

class MemoryByteSource final : public ByteSource {
public:
    explicit MemoryByteSource(std::string data) : data_(std::move(data)) {}
    std::size_t read_some(std::span<char> buf) override;

private:
    std::string data_;
    std::size_t pos_ = 0;
};

// Blocking reads on a file descriptor (the idle wait happens in the kernel).
class FdByteSource final : public ByteSource {
public:
    explicit FdByteSource(int fd) : fd_(fd) {}
    std::size_t read_some(std::span<char> buf) override;

private:
    int fd_;
};

// Buffered frame decoder.
class FrameReader {
public:
    explicit FrameReader(ByteSource& source) : source_(source) {}
    // Next payload; nullopt for the terminator frame. Throws ProtocolError on
    // oversized lengths or input that ends mid-frame or before a terminator.
    std::optional<std::string> next();

private:
    bool fill(std::size_t n);  // false on clean EOF with nothing buffered

    ByteSource& source_;
    std::vector<char> buffer_;
    std::size_t begin_ = 0;
};

// Decodes a whole connection: handshake, then records in seq order.
class StreamDecoder {
public:
    explicit StreamDecoder(ByteSource& source);
    const Schema& schema() const noexcept { return schema_; }
    // Next record with received_at stamped, nullopt after the terminator.
    std::optional<StreamRecord> next();
    std::uint64_t received() const noexcept { return expected_seq_; }

private:
    FrameReader frames_;
    Schema schema_;
    std::uint64_t expected_seq_ = 0;
};

// Owning socket handle.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket();
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }
    void shutdown_write();
    void close();

private:
    int fd_ = -1;
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    static Endpoint parse(std::string_view host_port);  // throws std::invalid_argument
    std::string str() const { return host + ":" + std::to_string(port); }
};

class Listener {
public:
    // Port 0 picks an ephemeral port.
    explicit Listener(const Endpoint& at);
    std::uint16_t port() const noexcept { return port_; }
    // Blocks until a client connects or `timeout` passes (NetworkError).
    Socket accept(std::optional<std::chrono::milliseconds> timeout = std::nullopt);

private:
    Socket socket_;
    std::uint16_t port_ = 0;
};

Socket connect_to(const Endpoint& to, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

// Writes all of `data`. Returns true if the socket buffer was full at least
// once (backpressure); throws NetworkError on failure.
bool send_all(int fd, std::string_view data);

// Refill `rate` tokens per second up to `capacity`.
class TokenBucket {
public:
    TokenBucket(double rate, double capacity = 1.0, std::int64_t now_ns = 0);
    // Nanoseconds until one token is available at `now_ns` (0 if available).
    std::int64_t wait_ns(std::int64_t now_ns);
    bool try_take(std::int64_t now_ns);
    // Sleeps until a token is available, then takes it.
    void acquire();
    double rate() const noexcept { return rate_; }

private:
    void refill(std::int64_t now_ns);
    double rate_;
    double capacity_;
    double tokens_;
    std::int64_t last_ns_;
};

struct SendEntry {
    std::uint64_t seq = 0;
    std::int64_t sent_at_ns = 0;
    std::size_t row = 0;
    bool backpressure = false;
};

struct SendLog {
    std::vector<SendEntry> entries;
    std::size_t backpressure_events = 0;
    std::int64_t started_ns = 0;
    std::int64_t finished_ns = 0;
    bool terminated = false;
};

struct LoadOptions {
    std::optional<double> rate;  // instances/s; unset = unthrottled
    std::optional<std::chrono::nanoseconds> duration;
    std::optional<std::uint64_t> count;
    const std::atomic<bool>* stop = nullptr;
};

// Streams `instances` (looping as needed) over a connected socket: handshake,
// paced rows, terminator.
SendLog generate_load(int fd, const Schema& schema, std::span<const Instance> instances, const LoadOptions& options);

// Writes the send log as CSV: seq,sent_at_ns,row,backpressure.
void write_send_log(std::ostream& out, const SendLog& log);

// Bounded blocking queue used between the socket reader and the executor.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

    // Blocks while full. Returns false if the queue was closed.
    bool push(T item) {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }

    enum class PopResult : std::uint8_t { item, closed, timeout };

    PopResult pop(T& out, std::optional<std::int64_t> deadline_ns) {
        std::unique_lock lock(mutex_);
        auto ready = [&] { return closed_ || !items_.empty(); };
        if (deadline_ns) {
            auto remaining = std::chrono::nanoseconds(*deadline_ns - monotonic_ns());
            if (!not_empty_.wait_for(lock, remaining, ready)) return PopResult::timeout;
        } else {
            not_empty_.wait(lock, ready);
        }
        if (items_.empty()) {
            if (error_) std::rethrow_exception(error_);
            return PopResult::closed;
        }
        out = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return PopResult::item;
    }

    void close(std::exception_ptr error = nullptr) {
        std::lock_guard lock(mutex_);
        closed_ = true;
        if (error && !error_) error_ = error;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    std::size_t capacity() const noexcept { return capacity_; }

private:
    std::size_t capacity_;
    std::mutex mutex_;
    std::condition_variable not_empty_;
    std::condition_variable not_full_;
    std::deque<T> items_;
    std::exception_ptr error_;
    bool closed_ = false;
};

// Reads the handshake synchronously, then a reader thread decodes frames into
// a bounded queue. The executor's blocking pop is the idle wait.
class StreamReceiver final : public RecordSource {
public:
    StreamReceiver(Socket socket, std::size_t queue_capacity);
    ~StreamReceiver() override;

    const Schema& schema() const noexcept { return decoder_.schema(); }
    Status next(StreamRecord& out, std::optional<std::int64_t> deadline_ns) override;
    std::uint64_t received() const noexcept { return received_.load(); }

private:
    void reader_loop();

    Socket socket_;
    FdByteSource bytes_;
    StreamDecoder decoder_;
    BoundedQueue<StreamRecord> queue_;
    std::atomic<std::uint64_t> received_{0};
    std::thread reader_;
};

struct CalibrationOptions {
    std::chrono::milliseconds warmup{30000};
};

// Streams unthrottled to a processor listening at `processor` for the warmup
// window and returns the mean send rate over its final two thirds.
double calibrate_capacity(const Endpoint& processor, const Schema& schema, std::span<const Instance> instances,
                          const CalibrationOptions& options);

// Mean rate over the final two thirds of a send log's window.
double steady_state_rate(const SendLog& log);

}  // namespace streambag
