from setuptools import setup, find_packages


with open('requirements.txt') as f:
    requirements = f.read().splitlines()

setup(
    name="hmm-icl",
    version="0.1.0",
    author="hmm-icl contributors",
    description="An explicit Transformer construction that learns low-rank hidden Markov models in context, "
                "with exact oracles and an error-decomposition harness.",
    long_description=open("README.md", "r", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    license="MIT",

    packages=find_packages(exclude=("docs", "test", "log", "configs")),
    py_modules=["quick_start"],

    install_requires=requirements,

    entry_points={
        "console_scripts": [
            "hmm-icl=quick_start:main",
        ],
    },

    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    keywords="in-context learning, hidden Markov models, Transformers, gradient descent",

    python_requires='>=3.10',
)
