from distutils.core import setup

setup(
    name="topview-navigation",
    packages=["topv"],
    install_requires=[
        "numpy",
        "fire",
        "argh",
        "scikit-learn",
        "joblib",
        "matplotlib",
        "seaborn",
        "scipy",
        "arrow",
        "pandas",
        "pillow",
        "requests",
        "tenacity",
    ],
    package_data={"topv": ["py.typed", "prompts/*.txt"],},
)
