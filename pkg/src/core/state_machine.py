import enum

from transitions import Machine


class States(enum.Enum):
    READY = 1
    TRAINING = 2
    AUDITING = 3
    FINISHED = 4
    DIVERGED = 5


transitions = [
    {"trigger": "start_training", "source": States.READY, "dest": States.TRAINING},
    {
        "trigger": "finish_training",
        "source": States.TRAINING,
        "dest": States.AUDITING,
    },
    {
        "trigger": "finish_auditing",
        "source": States.AUDITING,
        "dest": States.FINISHED,
    },
    {"trigger": "diverge", "source": States.TRAINING, "dest": States.DIVERGED},
]


def create_state_machine():
    """Create the per-seed run lifecycle machine."""
    return Machine(
        states=States,
        transitions=transitions,
        send_event=True,
        ignore_invalid_triggers=True,
        initial=States.READY,
    )
