import os

class Config:
    RUNS_DIR = os.getenv('PSEUDOHEAL_RUNS_DIR', 'runs')
    DATA_DIR = os.getenv('PSEUDOHEAL_DATA_DIR', 'data/phantom')
    LOG_LEVEL = os.getenv('PSEUDOHEAL_LOG_LEVEL', 'INFO')
    NUM_THREADS = int(os.getenv('PSEUDOHEAL_NUM_THREADS', '1'))
    DETERMINISTIC = os.getenv('PSEUDOHEAL_DETERMINISTIC', '1') == '1'

    HISTOGRAM_WARN_THRESHOLD = float(os.getenv('PSEUDOHEAL_HISTOGRAM_WARN_THRESHOLD', '0.1'))
