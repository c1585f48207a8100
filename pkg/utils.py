import os
import platform
import statistics

import torch


def save_config(config, config_file):
    """Save the effective yacs config next to a result file."""
    with open(config_file, "w") as file:
        file.write(config.dump())


class AverageMeter(object):
    """Computes and stores the average, median and current value."""

    def __init__(self, name, fmt=':f'):
        self.name = name
        self.fmt = fmt
        self.reset()

    def reset(self):
        self.val = 0
        self.avg = 0
        self.sum = 0
        self.count = 0
        self.values = []

    def update(self, val, n=1):
        self.val = val
        self.sum += val * n
        self.count += n
        self.avg = self.sum / self.count
        self.values.extend([val] * n)

    @property
    def median(self):
        return statistics.median(self.values) if self.values else 0

    def __str__(self):
        fmtstr = '{name} {val' + self.fmt + '} ({avg' + self.fmt + '})'
        return fmtstr.format(**self.__dict__)


def host_descriptor():
    """Short host label for timing columns, e.g. ``x86_64-Linux-8cpu-torch2.3.0``."""
    return f"{platform.machine()}-{platform.system()}-{os.cpu_count()}cpu-torch{torch.__version__}"


def set_threads(threads):
    """Set the torch intra-op thread count; 0 keeps the default."""
    if threads < 0:
        raise ValueError(f"threads must be >= 0, got {threads}")
    if threads:
        torch.set_num_threads(threads)
    return torch.get_num_threads()


def length_to_nt(seconds, nt_per_10s):
    """Latent time steps for ``seconds`` of audio."""
    nt = nt_per_10s * seconds / 10
    if nt != int(nt) or nt < 1:
        raise ValueError(f"{seconds}s does not map to a whole number of time steps at {nt_per_10s} per 10s")
    return int(nt)
