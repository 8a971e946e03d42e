from datetime import datetime

from phibayes.errors import PhiBayesError


class ReplicationResponse:
    finish_time: datetime | None = None
    elapsed_time: float | None = None
    result: dict | None = None
    failed: bool = True
    error: str | None = None
    error_type: str | None = None
    details: dict | None = None

    def __init__(self, replication: int, label: str = "") -> None:
        """
        Outcome of one replication of a study

        Args:
            replication: replication index
            label: cell of the study the replication belongs to, e.g. "gamma=0.5 eps=0.1"
        """
        self.replication = replication
        self.label = label
        self.start_time = datetime.now()
        self.artifacts: dict[str, str] = {}

    def set_elapsed_time(self) -> None:
        """
        Set the time spent on completion
        """
        self.finish_time = datetime.now()
        self.elapsed_time = (self.finish_time - self.start_time).total_seconds()

    def record_result(self, result: dict, details: dict | None = None) -> None:
        """
        Record the result row and elapsed time

        Args:
            result: flat result row
            details: JSON-ready reports behind the row
        """
        self.set_elapsed_time()
        self.result = result
        self.details = details
        self.failed = False

    def record_error(self, error: PhiBayesError) -> None:
        """
        Record a failure and elapsed time

        Args:
            error: exception that aborted the replication
        """
        self.set_elapsed_time()
        self.result = None
        self.failed = True
        self.error = str(error)
        self.error_type = type(error).__name__

    def row(self) -> dict:
        """
        Result row of the replication; failed replications keep their index and the error
        """
        row = {"replication": self.replication, "label": self.label, "failed": self.failed}
        if self.failed:
            row["error"] = f"{self.error_type}: {self.error}"
            return row
        row.update(self.result or {})
        row["error"] = ""
        return row
