"""ZuCo MATLAB v7.3 recordings -> portable word-aligned EEG corpus."""

from .channels import REFERENCE_CHANNEL, ZUCO_CHANNELS
from .convert import ConvertError, IoError, ZucoSource, convert, read_sentences

__version__ = "0.1.0"
