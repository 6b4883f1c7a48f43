# -*- coding: UTF-8 -*-
"""Exceptions raised across the pipeline, and the exit code each maps to"""


class ContractViolation(ValueError):
    """A precondition, shape, or schema check failed"""
    exit_code = 1


class DatasetFormatError(ContractViolation):
    """A dataset or cache file could not be parsed"""
    def __init__(self, message, line=None):
        if line is not None:
            message = 'line {}: {}'.format(line, message)
        super().__init__(message)
        self.line = line


class NumericalFailure(ArithmeticError):
    """A loss, gradient, or sample went non-finite"""
    exit_code = 2

    def __init__(self, message, step=None):
        if step is not None:
            message = '{} (step {})'.format(message, step)
        super().__init__(message)
        self.step = step


class IntegratorFailure(NumericalFailure):
    """The probability-flow ODE solver gave up before reaching t_max"""
    def __init__(self, message, t_reached):
        super().__init__('{} (reached t={})'.format(message, t_reached))
        self.t_reached = t_reached


class EnvStepError(RuntimeError):
    """An environment step raised or returned garbage"""
    exit_code = 2

    def __init__(self, message, episode, step):
        super().__init__('episode {} step {}: {}'.format(episode, step, message))
        self.episode = episode
        self.step = step


def exit_code_for(error):
    """Map an exception to the CLI exit code

    :Returns: Integer

    :param error: The exception raised by a stage
    :type error: Exception
    """
    return getattr(error, 'exit_code', 1)
