import os

# Single-threaded runs are bit-deterministic; set before anything imports
# the library so every test sees the same execution mode.
os.environ.setdefault("NEUROPGM_THREADS", "1")
