#pragma once

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "error.hpp"

extern char** environ;

namespace alloctune {

namespace fs = std::filesystem;

using Environment = std::map<std::string, std::string>;

/// Variables carried over from the tuner's own environment into every child.
/// Everything else (MALLOC_*, TCMALLOC_*, LD_PRELOAD, GLIBC_TUNABLES, ...) is
/// dropped.
inline const std::vector<std::string>& default_base_keys() {
    static const std::vector<std::string> keys = {"PATH", "HOME", "USER", "LOGNAME", "LANG", "LC_ALL",
                                                  "TZ",   "TMPDIR", "TERM", "SHELL"};
    return keys;
}

inline Environment current_environment() {
    Environment env;
    for (char** e = environ; e && *e; ++e) {
        const char* eq = std::strchr(*e, '=');
        if (eq) env.emplace(std::string(static_cast<const char*>(*e), eq), std::string(eq + 1));
    }
    return env;
}

inline Environment scrubbed_base(const std::vector<std::string>& keys = default_base_keys()) {
    const auto all = current_environment();
    Environment env;
    for (const auto& k : keys)
        if (auto it = all.find(k); it != all.end()) env.insert(*it);
    return env;
}

/// mkdtemp directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& prefix = "alloctune") {
        const char* base = std::getenv("TMPDIR");
        std::string tmpl = std::string(base && *base ? base : "/tmp") + "/" + prefix + ".XXXXXX";
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw SubprocessError("mkdtemp failed: " + std::string(std::strerror(errno)));
        path_ = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

struct ProcessResult {
    int exit_code = -1;   // valid when exited normally
    int term_signal = 0;  // nonzero when killed by a signal
    bool timed_out = false;
    double seconds = 0;
    std::string out;
    std::string err;

    bool success() const { return !timed_out && term_signal == 0 && exit_code == 0; }
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Runs argv (PATH lookup) with exactly `env` as its environment, stdin from
/// /dev/null and output captured. The child leads its own process group so a
/// timeout kills everything it started.
inline ProcessResult run_process(const std::vector<std::string>& argv, const Environment& env,
                                 std::optional<double> timeout_seconds = std::nullopt) {
    if (argv.empty()) throw SubprocessError("empty command");
    TempDir io("alloctune-io");
    const auto out_path = (io.path() / "stdout").string();
    const auto err_path = (io.path() / "stderr").string();

    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, 0, "/dev/null", O_RDONLY, 0);
    posix_spawn_file_actions_addopen(&fa, 1, out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    posix_spawn_file_actions_addopen(&fa, 2, err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    std::vector<std::string> env_strings;
    for (const auto& [k, v] : env) env_strings.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_strings) envp.push_back(s.data());
    envp.push_back(nullptr);

    const auto start = std::chrono::steady_clock::now();
    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, args[0], &fa, &attr, args.data(), envp.data());
    posix_spawn_file_actions_destroy(&fa);
    posix_spawnattr_destroy(&attr);

    ProcessResult res;
    if (rc != 0) {
        res.exit_code = 127;
        res.err = "cannot execute '" + argv[0] + "': " + std::strerror(rc);
        return res;
    }

    // Poll without reaping so the child's pid, and with it the process
    // group id, stays reserved until the group has been killed.
    auto delay = std::chrono::microseconds(200);
    while (true) {
        siginfo_t info{};
        if (waitid(P_PID, static_cast<id_t>(pid), &info, WEXITED | WNOHANG | WNOWAIT) < 0) {
            if (errno == EINTR) continue;
            throw SubprocessError("waitid failed: " + std::string(std::strerror(errno)));
        }
        if (info.si_pid == pid) break;
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (timeout_seconds && elapsed > *timeout_seconds) {
            kill(-pid, SIGKILL);
            res.timed_out = true;
            break;
        }
        std::this_thread::sleep_for(delay);
        delay = std::min(delay * 2, std::chrono::microseconds(20000));
    }
    // stragglers left in the group (e.g. background helpers) go too
    kill(-pid, SIGKILL);
    int status = 0;
    while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (WIFEXITED(status)) res.exit_code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) res.term_signal = WTERMSIG(status);
    res.out = read_file(out_path);
    res.err = read_file(err_path);
    return res;
}

/// Expands a command template. Placeholders {driver}, {profile}, {seed} and
/// {out} are replaced inside any element; an element that is exactly {cmd}
/// becomes the whole workload command; an element that is exactly {touch}
/// becomes "--touch" or disappears.
struct TemplateVars {
    std::string driver, profile, seed, out;
    std::vector<std::string> cmd;
    bool touch = false;
};

inline std::vector<std::string> expand_template(const std::vector<std::string>& tmpl, const TemplateVars& v) {
    auto replace_all = [](std::string s, const std::string& key, const std::string& value) {
        for (std::size_t p = s.find(key); p != std::string::npos; p = s.find(key, p + value.size()))
            s.replace(p, key.size(), value);
        return s;
    };
    std::vector<std::string> out;
    for (const auto& e : tmpl) {
        if (e == "{cmd}") {
            out.insert(out.end(), v.cmd.begin(), v.cmd.end());
            continue;
        }
        if (e == "{touch}") {
            if (v.touch) out.push_back("--touch");
            continue;
        }
        std::string s = replace_all(e, "{driver}", v.driver);
        s = replace_all(s, "{profile}", v.profile);
        s = replace_all(s, "{seed}", v.seed);
        s = replace_all(s, "{out}", v.out);
        out.push_back(std::move(s));
    }
    return out;
}

/// Splits on whitespace; used for command templates given on the command line.
inline std::vector<std::string> split_command(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

inline bool executable_in_path(const std::string& name) {
    if (name.find('/') != std::string::npos) return access(name.c_str(), X_OK) == 0;
    const char* path = std::getenv("PATH");
    if (!path) return false;
    std::istringstream in(path);
    for (std::string dir; std::getline(in, dir, ':');)
        if (!dir.empty() && access((fs::path(dir) / name).c_str(), X_OK) == 0) return true;
    return false;
}

}  // namespace alloctune
