use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Pending,
    Running,
    Succeeded,
    Failed,
    Interrupted,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Succeeded | TaskState::Failed | TaskState::Interrupted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::Running => "running",
            TaskState::Succeeded => "succeeded",
            TaskState::Failed => "failed",
            TaskState::Interrupted => "interrupted",
        }
    }

    /// Edges of the lifecycle graph.
    pub fn can_become(self, next: TaskState) -> bool {
        matches!(
            (self, next),
            (TaskState::Pending, TaskState::Running)
                | (TaskState::Running, TaskState::Succeeded | TaskState::Failed | TaskState::Interrupted)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafStatus {
    Running,
    Succeeded,
    Failed,
}

/// Behaviour of a leaf task over a shared context.
pub trait Behavior<C> {
    fn tick(&mut self, ctx: &mut C, now: f64, dt: f64) -> LeafStatus;
    fn interrupt(&mut self, _ctx: &mut C, _now: f64) {}
}

impl<C, F: FnMut(&mut C, f64, f64) -> LeafStatus> Behavior<C> for F {
    fn tick(&mut self, ctx: &mut C, now: f64, dt: f64) -> LeafStatus {
        self(ctx, now, dt)
    }
}

enum Node<C> {
    Leaf(Box<dyn Behavior<C>>),
    Sequence(Vec<Task<C>>),
    Parallel(Vec<Task<C>>),
}

pub struct Task<C> {
    pub name: String,
    pub interrupt_priority: i32,
    state: TaskState,
    node: Node<C>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub time: f64,
    pub task: String,
    pub from: TaskState,
    pub to: TaskState,
    pub priority: i32,
}

impl<C> Task<C> {
    pub fn leaf(name: &str, interrupt_priority: i32, behavior: impl Behavior<C> + 'static) -> Self {
        Task { name: name.into(), interrupt_priority, state: TaskState::Pending, node: Node::Leaf(Box::new(behavior)) }
    }

    pub fn boxed_leaf(name: &str, interrupt_priority: i32, behavior: Box<dyn Behavior<C>>) -> Self {
        Task { name: name.into(), interrupt_priority, state: TaskState::Pending, node: Node::Leaf(behavior) }
    }

    pub fn sequence(name: &str, interrupt_priority: i32, children: Vec<Task<C>>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::Structural(format!("sequence '{name}' has no children")));
        }
        Ok(Task { name: name.into(), interrupt_priority, state: TaskState::Pending, node: Node::Sequence(children) })
    }

    pub fn parallel(name: &str, interrupt_priority: i32, children: Vec<Task<C>>) -> Result<Self> {
        if children.len() < 2 {
            return Err(Error::Structural(format!("parallel '{name}' needs at least two children")));
        }
        Ok(Task { name: name.into(), interrupt_priority, state: TaskState::Pending, node: Node::Parallel(children) })
    }

    pub fn state(&self) -> TaskState {
        self.state
    }

    pub fn children(&self) -> &[Task<C>] {
        match &self.node {
            Node::Leaf(_) => &[],
            Node::Sequence(c) | Node::Parallel(c) => c,
        }
    }

    /// Depth-first search by name.
    pub fn find(&self, name: &str) -> Option<&Task<C>> {
        if self.name == name {
            return Some(self);
        }
        self.children().iter().find_map(|c| c.find(name))
    }

    fn set(&mut self, to: TaskState, now: f64, log: &mut Vec<Transition>) {
        assert!(self.state.can_become(to), "task '{}': {:?} -> {:?}", self.name, self.state, to);
        log.push(Transition { time: now, task: self.name.clone(), from: self.state, to, priority: self.interrupt_priority });
        self.state = to;
    }

    fn tick(&mut self, ctx: &mut C, now: f64, dt: f64, log: &mut Vec<Transition>) -> TaskState {
        if self.state.is_terminal() {
            return self.state;
        }
        if self.state == TaskState::Pending {
            self.set(TaskState::Running, now, log);
        }
        let next = match &mut self.node {
            Node::Leaf(b) => match b.tick(ctx, now, dt) {
                LeafStatus::Running => TaskState::Running,
                LeafStatus::Succeeded => TaskState::Succeeded,
                LeafStatus::Failed => TaskState::Failed,
            },
            Node::Sequence(children) => {
                let mut next = TaskState::Succeeded;
                for c in children.iter_mut() {
                    match c.tick(ctx, now, dt, log) {
                        TaskState::Succeeded => continue,
                        TaskState::Running | TaskState::Pending => {
                            next = TaskState::Running;
                            break;
                        }
                        TaskState::Failed | TaskState::Interrupted => {
                            next = TaskState::Failed;
                            break;
                        }
                    }
                }
                next
            }
            Node::Parallel(children) => {
                let before: Vec<TaskState> = children.iter().map(|c| c.state).collect();
                let mut triggers = Vec::new();
                for (k, (c, &b)) in children.iter_mut().zip(&before).enumerate() {
                    if b.is_terminal() {
                        continue;
                    }
                    // Starts and failures anywhere in the child's subtree count.
                    let mark = log.len();
                    c.tick(ctx, now, dt, log);
                    for t in &log[mark..] {
                        if t.from == TaskState::Pending || t.to == TaskState::Failed {
                            triggers.push((k, t.priority));
                        }
                    }
                }
                // Only siblings that were already running before this tick
                // can be pre-empted; simultaneous starts run side by side.
                for (src, p) in triggers {
                    for (k, (c, &b)) in children.iter_mut().zip(&before).enumerate() {
                        if k != src && b == TaskState::Running && c.state == TaskState::Running && c.interrupt_priority < p {
                            c.interrupt(ctx, now, log);
                        }
                    }
                }
                if children.iter().all(|c| c.state.is_terminal()) {
                    if children.iter().any(|c| c.state == TaskState::Failed) {
                        TaskState::Failed
                    } else {
                        TaskState::Succeeded
                    }
                } else {
                    TaskState::Running
                }
            }
        };
        if next != TaskState::Running {
            self.set(next, now, log);
        }
        self.state
    }

    fn interrupt(&mut self, ctx: &mut C, now: f64, log: &mut Vec<Transition>) {
        if self.state != TaskState::Running {
            return;
        }
        match &mut self.node {
            Node::Leaf(b) => b.interrupt(ctx, now),
            Node::Sequence(children) | Node::Parallel(children) => {
                for c in children.iter_mut() {
                    c.interrupt(ctx, now, log);
                }
            }
        }
        self.set(TaskState::Interrupted, now, log);
    }
}

/// Owns a task tree and the simulated clock that drives it.
pub struct Scheduler<C> {
    pub root: Task<C>,
    pub now: f64,
    pub log: Vec<Transition>,
}

impl<C> Scheduler<C> {
    pub fn new(root: Task<C>) -> Self {
        Scheduler { root, now: 0.0, log: Vec::new() }
    }

    /// Ticks the tree at the current time, then advances the clock by `dt`.
    pub fn tick(&mut self, ctx: &mut C, dt: f64) -> TaskState {
        let s = self.root.tick(ctx, self.now, dt, &mut self.log);
        self.now += dt;
        s
    }

    pub fn state(&self) -> TaskState {
        self.root.state
    }
}

/// Declarative form of a task tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default = "leaf_kind")]
    pub kind: String,
    /// Behaviour name for leaves.
    #[serde(default)]
    pub behavior: Option<String>,
    #[serde(default)]
    pub children: Vec<TaskSpec>,
    #[serde(default)]
    pub interrupt_priority: i32,
}

fn leaf_kind() -> String {
    "leaf".into()
}

impl TaskSpec {
    pub fn leaf(name: &str, behavior: &str, interrupt_priority: i32) -> Self {
        TaskSpec { name: name.into(), kind: "leaf".into(), behavior: Some(behavior.into()), children: Vec::new(), interrupt_priority }
    }

    pub fn group(kind: &str, name: &str, interrupt_priority: i32, children: Vec<TaskSpec>) -> Self {
        TaskSpec { name: name.into(), kind: kind.into(), behavior: None, children, interrupt_priority }
    }
}

/// Instantiates `spec`, resolving leaf behaviours through `make`.
pub fn build_tree<C>(spec: &TaskSpec, make: &mut dyn FnMut(&str) -> Option<Box<dyn Behavior<C>>>) -> Result<Task<C>> {
    match spec.kind.as_str() {
        "leaf" => {
            if !spec.children.is_empty() {
                return Err(Error::Structural(format!("leaf '{}' has children", spec.name)));
            }
            let name = spec
                .behavior
                .as_deref()
                .ok_or_else(|| Error::Structural(format!("leaf '{}' names no behavior", spec.name)))?;
            let b = make(name).ok_or_else(|| Error::Structural(format!("unknown behavior '{name}' in '{}'", spec.name)))?;
            Ok(Task::boxed_leaf(&spec.name, spec.interrupt_priority, b))
        }
        "sequence" | "parallel" => {
            if spec.behavior.is_some() {
                return Err(Error::Structural(format!("group '{}' cannot name a behavior", spec.name)));
            }
            let kids = spec.children.iter().map(|c| build_tree(c, make)).collect::<Result<Vec<_>>>()?;
            if spec.kind == "sequence" {
                Task::sequence(&spec.name, spec.interrupt_priority, kids)
            } else {
                Task::parallel(&spec.name, spec.interrupt_priority, kids)
            }
        }
        other => Err(Error::Structural(format!("unknown task kind '{other}' in '{}'", spec.name))),
    }
}
