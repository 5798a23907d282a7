#pragma once

// POSIX child process with line-oriented stdin/stdout pipes. Stderr is
// drained on a background thread into a buffer.

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "error.hpp"

namespace sam2aug
{

class Subprocess
{
public:
    /// Runs `command` through /bin/sh -c. Throws SpawnFailure if the process
    /// cannot be created or exec fails.
    explicit Subprocess(const std::string& command)
    {
        ignore_sigpipe();
        int in_pipe[2], out_pipe[2], err_pipe[2], exec_pipe[2];
        if (::pipe(in_pipe) || ::pipe(out_pipe) || ::pipe(err_pipe) || ::pipe2(exec_pipe, O_CLOEXEC))
            fail(Errc::SpawnFailure, std::string("pipe: ") + std::strerror(errno));
        pid_ = ::fork();
        if (pid_ < 0)
            fail(Errc::SpawnFailure, std::string("fork: ") + std::strerror(errno));
        if (pid_ == 0) {
            ::dup2(in_pipe[0], STDIN_FILENO);
            ::dup2(out_pipe[1], STDOUT_FILENO);
            ::dup2(err_pipe[1], STDERR_FILENO);
            for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1], exec_pipe[0]})
                ::close(fd);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            const int e = errno;
            [[maybe_unused]] auto n = ::write(exec_pipe[1], &e, sizeof e);
            ::_exit(127);
        }
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        ::close(err_pipe[1]);
        ::close(exec_pipe[1]);
        int child_errno = 0;
        const auto n = ::read(exec_pipe[0], &child_errno, sizeof child_errno);
        ::close(exec_pipe[0]);
        stdin_fd_ = in_pipe[1];
        stdout_fd_ = out_pipe[0];
        stderr_fd_ = err_pipe[0];
        if (n == static_cast<ssize_t>(sizeof child_errno)) {
            close_all();
            reap(true);
            fail(Errc::SpawnFailure, std::string("exec: ") + std::strerror(child_errno));
        }
        stderr_thread_ = std::thread([this] { drain_stderr(); });
    }

    Subprocess(const Subprocess&) = delete;
    Subprocess& operator=(const Subprocess&) = delete;

    ~Subprocess()
    {
        if (stdin_fd_ >= 0)
            ::close(stdin_fd_);
        stdin_fd_ = -1;
        if (!wait_exit(std::chrono::milliseconds(2000)))
            reap(true);
        stop_ = true;
        if (stderr_thread_.joinable())
            stderr_thread_.join();
        close_all();
    }

    /// Writes one line (a newline is appended). Returns false if the pipe is closed.
    bool write_line(const std::string& line)
    {
        const std::string buf = line + "\n";
        std::size_t off = 0;
        while (off < buf.size()) {
            const auto n = ::write(stdin_fd_, buf.data() + off, buf.size() - off);
            if (n < 0) {
                if (errno == EINTR)
                    continue;
                return false;
            }
            off += static_cast<std::size_t>(n);
        }
        return true;
    }

    enum class ReadStatus
    {
        Line,
        Timeout,
        Eof,
    };

    /// Next stdout line without the trailing newline.
    ReadStatus read_line(std::string& line, std::chrono::milliseconds timeout)
    {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            const auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return ReadStatus::Line;
            }
            if (eof_)
                return ReadStatus::Eof;
            const auto left =
                std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0)
                return ReadStatus::Timeout;
            pollfd pfd{stdout_fd_, POLLIN, 0};
            const int r = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
            if (r < 0 && errno == EINTR)
                continue;
            if (r <= 0)
                continue;
            char chunk[4096];
            const auto n = ::read(stdout_fd_, chunk, sizeof chunk);
            if (n <= 0) {
                if (n < 0 && errno == EINTR)
                    continue;
                eof_ = true;
                continue;
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    /// Waits for the child to exit; true if it did within the timeout.
    bool wait_exit(std::chrono::milliseconds timeout)
    {
        if (exited_)
            return true;
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            int status = 0;
            const pid_t r = ::waitpid(pid_, &status, WNOHANG);
            if (r == pid_) {
                exited_ = true;
                exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
                return true;
            }
            if (std::chrono::steady_clock::now() >= deadline)
                return false;
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
    }

    std::optional<int> exit_code() const { return exited_ ? std::optional<int>(exit_code_) : std::nullopt; }

    std::string stderr_text() const
    {
        std::lock_guard lock(err_mutex_);
        return stderr_buf_;
    }

    /// Stderr once the stream has hit EOF (or the timeout passed).
    std::string stderr_text(std::chrono::milliseconds settle)
    {
        const auto deadline = std::chrono::steady_clock::now() + settle;
        while (!stderr_done_ && std::chrono::steady_clock::now() < deadline)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return stderr_text();
    }

    void kill() { reap(true); }

private:
    static void ignore_sigpipe()
    {
        static std::once_flag once;
        std::call_once(once, [] {
            struct sigaction old{};
            ::sigaction(SIGPIPE, nullptr, &old);
            if (old.sa_handler == SIG_DFL)
                ::signal(SIGPIPE, SIG_IGN);
        });
    }

    void drain_stderr()
    {
        struct Done
        {
            std::atomic<bool>& flag;
            ~Done() { flag = true; }
        } done{stderr_done_};
        char chunk[4096];
        for (;;) {
            pollfd pfd{stderr_fd_, POLLIN, 0};
            const int r = ::poll(&pfd, 1, 50);
            if (r == 0) {
                if (stop_)
                    return;
                continue;
            }
            if (r < 0) {
                if (errno == EINTR)
                    continue;
                return;
            }
            const auto n = ::read(stderr_fd_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR)
                continue;
            if (n <= 0)
                return;
            std::lock_guard lock(err_mutex_);
            stderr_buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    void reap(bool force)
    {
        if (exited_ || pid_ <= 0)
            return;
        if (force)
            ::kill(pid_, SIGKILL);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        exited_ = true;
        exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    void close_all()
    {
        for (int* fd : {&stdin_fd_, &stdout_fd_, &stderr_fd_})
            if (*fd >= 0) {
                ::close(*fd);
                *fd = -1;
            }
    }

    pid_t pid_ = -1;
    int stdin_fd_ = -1;
    int stdout_fd_ = -1;
    int stderr_fd_ = -1;
    std::string buffer_;
    bool eof_ = false;
    bool exited_ = false;
    int exit_code_ = -1;
    std::atomic<bool> stop_{false};
    std::atomic<bool> stderr_done_{false};
    std::thread stderr_thread_;
    mutable std::mutex err_mutex_;
    std::string stderr_buf_;
};

} // namespace sam2aug
