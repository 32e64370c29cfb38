from .checkpoint import CheckpointError, load_checkpoint, load_model, save_checkpoint, save_model
from .gradcheck import numeric_grad, relative_error
from .layers import Conv2D, Dense, Flatten, MaxPool2D, Sequential, SoftmaxHead, nll_loss, softmax, softmax_nll_grad
from .optim import SgdMomentum, default_milestones
from .recurrent import LSTM, lstm_step
