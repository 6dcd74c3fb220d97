import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Generic, TypeVar

logger = logging.getLogger(__name__)

StateT = TypeVar('StateT', bound=Dict[str, Any])

# node name -> description, filled as solvers are registered with a workflow
SolverRegistry: Dict[str, str] = {}


class BaseSolver(ABC, Generic[StateT]):
    """
    Abstract base class for the stages of the optimization workflow.
    Each stage is a named graph node that reads the shared state and returns
    the keys it updates.
    """
    def __init__(self, name: str, problem: Any = None, **settings: Any):
        """
        Initialize the solver stage.

        :param name: The node name used in the workflow graph
        :param problem: The discretized problem the stage operates on
        :param settings: Stage specific settings (objective parameters, solver configs)
        """
        self.name = name
        self.problem = problem
        self.settings = settings

    def register(self, state: StateT) -> None:
        """
        Record the stage's docstring in the SolverRegistry and reserve its
        counter in the state.
        """
        solver_docstring = self.__class__.__doc__
        description = solver_docstring.strip() if solver_docstring else "No description provided."
        SolverRegistry[self.name] = description
        state.setdefault("calls", {})
        state["calls"][self.name] = 0
        logger.debug(f"Solver '{self.name}' registered")

    def count_call(self, state: StateT) -> Dict[str, int]:
        calls = dict(state.get("calls", {}))
        calls[self.name] = calls.get(self.name, 0) + 1
        return calls

    @abstractmethod
    def invoke(self, state: StateT) -> Dict[str, Any]:
        """
        Run the stage on the current state.

        :param state: The shared workflow state
        :return: The state keys this stage updates
        """
        pass
