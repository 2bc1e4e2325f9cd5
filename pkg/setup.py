"""
rnn-td - Marked temporal dynamics with recurrent intensity models
"""

from setuptools import setup, find_packages
from pathlib import Path

this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text(encoding='utf-8')

# Runtime pins live in requirements.txt
requirements = []
requirements_file = this_directory / "requirements.txt"
if requirements_file.exists():
    with open(requirements_file, 'r', encoding='utf-8') as f:
        requirements = [line.strip() for line in f if line.strip() and not line.startswith('#')]

setup(
    name="rnn-td",
    version="0.1.0",
    description="Recurrent marked temporal point process models, baselines, simulation and evaluation",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "logs", "data", "runs", "examples", "examples.*"]),
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={
        'dev': [
            'pytest>=7.0.0',
            'pytest-cov>=4.0.0',
            'black>=23.0.0',
            'flake8>=6.0.0',
            'mypy>=1.0.0',
        ],
    },
    entry_points={
        'console_scripts': [
            'rnn-td=src.cli:main',
        ],
    },
    # Generator specs and the settings template ship next to the package
    data_files=[
        ('config', [
            'config/config.yaml',
            'config/simulate_mspp_poisson.yaml',
            'config/simulate_markov_duration.yaml',
            'config/simulate_hawkes.yaml',
            'config/.env.example',
        ]),
    ],
    classifiers=[
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
    ],
    keywords=["temporal-point-process", "hawkes", "recurrent-neural-network", "event-sequence"],
    license="MIT",
)
