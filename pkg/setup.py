#!/usr/bin/env python3
"""
Setup script for the latent space element method.
Installs dependencies, prepares output directories and the .env file.
"""

import sys
import subprocess
import platform
from pathlib import Path


class SetupManager:
    """Manages the complete setup process."""

    def __init__(self):
        self.system = platform.system().lower()
        self.python_executable = sys.executable
        self.project_root = Path(__file__).parent

    def log(self, message, level="INFO"):
        """Log a message."""
        prefix = {"INFO": "ℹ️", "SUCCESS": "✅", "ERROR": "❌", "WARNING": "⚠️"}
        print(f"{prefix.get(level, 'ℹ️')} {message}")

    def run_command(self, command, description, cwd=None, check=True):
        """Run a command safely."""
        self.log(f"Running: {description}")

        try:
            result = subprocess.run(
                command,
                shell=True,
                cwd=cwd or self.project_root,
                capture_output=True,
                text=True
            )

            if result.returncode == 0:
                self.log(f"Success: {description}", "SUCCESS")
                return True, result.stdout
            else:
                level = "ERROR" if check else "WARNING"
                self.log(f"{'Failed' if check else 'Warning'}: {description} - {result.stderr}", level)
                return False, result.stderr

        except Exception as e:
            self.log(f"Exception in {description}: {e}", "ERROR")
            return False, str(e)

    def check_python_version(self):
        """Check if Python version is compatible."""
        self.log("Checking Python version...")

        version = sys.version_info
        if version.major < 3 or (version.major == 3 and version.minor < 9):
            self.log(f"Python {version.major}.{version.minor} detected. Requires Python 3.9+", "ERROR")
            return False

        self.log(f"Python {version.major}.{version.minor}.{version.micro} - OK", "SUCCESS")
        return True

    def install_python_dependencies(self):
        """Install runtime and test dependencies."""
        self.log("Installing Python dependencies...")

        success, _ = self.run_command(
            f'"{self.python_executable}" -m pip install -r backend/requirements.txt',
            "Install main dependencies"
        )
        if not success:
            return False

        self.run_command(
            f'"{self.python_executable}" -m pip install -r requirements-test.txt',
            "Install test dependencies",
            check=False
        )
        return True

    def setup_environment_file(self):
        """Write a .env with the output root and logging defaults if none exists."""
        env_file = self.project_root / ".env"
        if env_file.exists():
            self.log(".env already present", "INFO")
            return True

        env_file.write_text(
            "LSEM_OUTPUT_ROOT=outputs\n"
            "LSEM_LOG_LEVEL=INFO\n"
            "LSEM_LOG_FORMAT=console\n"
        )
        self.log("Created .env", "SUCCESS")
        return True

    def create_directories(self):
        """Create output directories for both problems."""
        self.log("Creating output directories...")

        for directory in ["outputs/burgers/data", "outputs/burgers/reports", "outputs/kdv/data", "outputs/kdv/reports"]:
            (self.project_root / directory).mkdir(parents=True, exist_ok=True)

        self.log("Output directories created", "SUCCESS")
        return True

    def run_basic_tests(self):
        """Verify that the numerical stack imports."""
        self.log("Running basic verification tests...")

        results = []
        for module in ["numpy", "scipy", "torch", "pydantic", "pydantic_settings", "structlog"]:
            try:
                __import__(module)
                self.log(f"Import {module} - OK", "SUCCESS")
                results.append(True)
            except ImportError as e:
                self.log(f"Import {module} failed: {e}", "ERROR")
                results.append(False)

        return all(results)

    def run(self):
        steps = [
            self.check_python_version,
            self.install_python_dependencies,
            self.setup_environment_file,
            self.create_directories,
            self.run_basic_tests,
        ]
        for step in steps:
            if not step():
                self.log(f"Setup stopped at {step.__name__}", "ERROR")
                return 1

        self.log("Setup complete. Try: python backend/main.py config dump-defaults --problem burgers", "SUCCESS")
        return 0


if __name__ == "__main__":
    if len(sys.argv) > 1:
        # Invoked by a build frontend (pip/setuptools); metadata lives in pyproject.toml.
        from setuptools import setup
        setup()
    else:
        sys.exit(SetupManager().run())
