//! Server-client federated simulator: broadcast, local training,
//! collection, FedAvg aggregation of the shared classifier, and the
//! round loop. Deterministic and in-process, with an explicit binary
//! message schema usable for on-disk round snapshots.
//!
//! Only the federated-layer classifier crosses the client boundary.
//! Manifold-reduction weights and raw trials stay local; the one
//! documented exception is the per-class reduced-matrix summaries on
//! the common space that the domain-adaptation loss requires, carried
//! in an explicitly flagged message section.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::{network_forward, DenseLayer, ModelParams};
use crate::losses::LossWeights;
use crate::optim::{epoch_stats, lr_at, sgd_step, DomainTerm, Schedule};
use crate::{Matrix, SpdMat};

const MESSAGE_MAGIC: &[u8; 4] = b"FTLM";
const SCHEMA_VERSION: u16 = 1;

/// Per-class reduced matrices a client shares for the domain loss,
/// indexed [class][sample].
pub type DomainSummaries = Vec<Vec<SpdMat>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Broadcast,
    Upload,
}

/// One simulator message: shared-classifier payload with declared
/// shapes, plus the optional flagged domain-adaptation section.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub direction: Direction,
    pub round: u32,
    /// Present on uploads only.
    pub client_id: Option<u32>,
    pub shared: DenseLayer,
    pub domain_summaries: Option<DomainSummaries>,
}

impl RoundMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MESSAGE_MAGIC);
        buf.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        buf.push(match self.direction {
            Direction::Broadcast => 0,
            Direction::Upload => 1,
        });
        buf.extend_from_slice(&self.round.to_le_bytes());
        buf.extend_from_slice(&self.client_id.unwrap_or(u32::MAX).to_le_bytes());

        // Shared classifier: weight then bias.
        buf.extend_from_slice(&2u32.to_le_bytes());
        encode_tensor(
            &mut buf,
            &[self.shared.weight.rows(), self.shared.weight.cols()],
            self.shared.weight.data(),
        );
        encode_tensor(&mut buf, &[self.shared.bias.len()], &self.shared.bias);

        match &self.domain_summaries {
            None => buf.push(0),
            Some(per_class) => {
                buf.push(1);
                buf.extend_from_slice(&(per_class.len() as u32).to_le_bytes());
                for class in per_class {
                    buf.extend_from_slice(&(class.len() as u32).to_le_bytes());
                    for m in class {
                        encode_tensor(&mut buf, &[m.dim(), m.dim()], m.mat().data());
                    }
                }
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<RoundMessage> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MESSAGE_MAGIC {
            return Err(Error::Format {
                location: "offset 0".into(),
                message: "bad message magic".into(),
            });
        }
        let version = r.u16()?;
        if version != SCHEMA_VERSION {
            return Err(Error::Format {
                location: "offset 4".into(),
                message: format!("unsupported schema version {version}"),
            });
        }
        let direction = match r.u8()? {
            0 => Direction::Broadcast,
            1 => Direction::Upload,
            other => {
                return Err(Error::Format {
                    location: "offset 6".into(),
                    message: format!("unknown direction {other}"),
                })
            }
        };
        let round = r.u32()?;
        let client_raw = r.u32()?;
        let client_id = (client_raw != u32::MAX).then_some(client_raw);

        let n_tensors = r.u32()?;
        if n_tensors != 2 {
            return Err(Error::Format {
                location: format!("offset {}", r.pos),
                message: format!("expected 2 shared tensors, got {n_tensors}"),
            });
        }
        let (w_shape, w_data) = decode_tensor(&mut r)?;
        if w_shape.len() != 2 {
            return Err(Error::Format {
                location: format!("offset {}", r.pos),
                message: "shared weight must be rank 2".into(),
            });
        }
        let (b_shape, b_data) = decode_tensor(&mut r)?;
        if b_shape.len() != 1 {
            return Err(Error::Format {
                location: format!("offset {}", r.pos),
                message: "shared bias must be rank 1".into(),
            });
        }
        let shared = DenseLayer::new(
            Matrix::from_vec(w_shape[0], w_shape[1], w_data),
            b_data,
        )?;

        let domain_summaries = match r.u8()? {
            0 => None,
            1 => {
                let n_classes = r.u32()? as usize;
                let mut per_class = Vec::with_capacity(n_classes);
                for _ in 0..n_classes {
                    let count = r.u32()? as usize;
                    let mut mats = Vec::with_capacity(count);
                    for _ in 0..count {
                        let (shape, data) = decode_tensor(&mut r)?;
                        if shape.len() != 2 || shape[0] != shape[1] {
                            return Err(Error::Format {
                                location: format!("offset {}", r.pos),
                                message: "domain summary must be square".into(),
                            });
                        }
                        mats.push(SpdMat::from_mat(Matrix::from_vec(
                            shape[0], shape[1], data,
                        ))?);
                    }
                    per_class.push(mats);
                }
                Some(per_class)
            }
            other => {
                return Err(Error::Format {
                    location: format!("offset {}", r.pos),
                    message: format!("unknown domain-summary flag {other}"),
                })
            }
        };

        Ok(RoundMessage {
            direction,
            round,
            client_id,
            shared,
            domain_summaries,
        })
    }
}

fn encode_tensor(buf: &mut Vec<u8>, shape: &[usize], data: &[f64]) {
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_tensor(r: &mut Cursor<'_>) -> Result<(Vec<usize>, Vec<f64>)> {
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(r.f64()?);
    }
    Ok((shape, data))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                location: format!("offset {}", self.pos),
                message: "message truncated".into(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Elementwise unweighted mean of shared-classifier uploads. Callers
/// pass uploads in ascending client-id order for bitwise determinism.
pub fn fedavg(uploads: &[DenseLayer]) -> Result<DenseLayer> {
    let first = uploads
        .first()
        .ok_or_else(|| Error::EmptyInput("fedavg uploads".into()))?;
    let (rows, cols) = (first.weight.rows(), first.weight.cols());
    let mut weight = Matrix::zeros(rows, cols);
    let mut bias = vec![0.0; first.bias.len()];
    for u in uploads {
        if u.weight.rows() != rows || u.weight.cols() != cols || u.bias.len() != bias.len() {
            return Err(Error::Domain("upload shapes differ".into()));
        }
        weight = weight.add(&u.weight);
        for (b, v) in bias.iter_mut().zip(&u.bias) {
            *b += v;
        }
    }
    let inv_m = 1.0 / uploads.len() as f64;
    for (b, _) in bias.iter_mut().zip(0..) {
        *b *= inv_m;
    }
    DenseLayer::new(weight.scale(inv_m), bias)
}

/// One client of the simulator: local data, full parameters, trainer
/// schedule, and the cached peer summaries for the domain loss.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: u32,
    pub data: Vec<(SpdMat, usize)>,
    pub n_classes: usize,
    pub params: ModelParams,
    pub schedule: Schedule,
    pub stiefel: bool,
    pub epochs_trained: usize,
    peer_summaries: BTreeMap<u32, DomainSummaries>,
}

impl ClientState {
    pub fn new(
        id: u32,
        data: Vec<(SpdMat, usize)>,
        n_classes: usize,
        params: ModelParams,
        schedule: Schedule,
        stiefel: bool,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput(format!("client {id} data")));
        }
        Ok(ClientState {
            id,
            data,
            n_classes,
            params,
            schedule,
            stiefel,
            epochs_trained: 0,
            peer_summaries: BTreeMap::new(),
        })
    }

    /// Per-class reduced matrices on the common space from the current
    /// parameters.
    pub fn reduced_summaries(&self) -> Result<DomainSummaries> {
        let mut per_class: DomainSummaries = vec![Vec::new(); self.n_classes];
        for (s, label) in &self.data {
            let (_, tape) = network_forward(&self.params, s)?;
            per_class[*label].push(tape.reduced().clone());
        }
        Ok(per_class)
    }
}

/// Global shared weights, round counter, registered client ids.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub round: u32,
    pub global: DenseLayer,
    pub client_ids: Vec<u32>,
}

impl ServerState {
    pub fn new(global: DenseLayer, client_ids: Vec<u32>) -> Result<Self> {
        if client_ids.is_empty() {
            return Err(Error::EmptyInput("server requires clients".into()));
        }
        let mut sorted = client_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != client_ids.len() {
            return Err(Error::Domain("duplicate client ids".into()));
        }
        Ok(ServerState {
            round: 0,
            global,
            client_ids: sorted,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClientRoundStats {
    pub client_id: u32,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u32,
    pub clients: Vec<ClientRoundStats>,
}

/// Weighting of the domain loss between client pairs and classes.
#[derive(Debug, Clone)]
pub struct FedConfig {
    pub local_epochs: usize,
    pub max_rounds: usize,
    /// Round loop stops once every client's epoch-end loss is below this.
    pub stop_loss: f64,
    pub weights: LossWeights,
    pub sigma: f64,
}

/// One synchronous round: broadcast, local training, upload, FedAvg.
/// All cross-boundary state passes through encoded [`RoundMessage`]s.
/// On any client failure the round aborts and no state changes.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &FedConfig,
) -> Result<RoundReport> {
    for c in clients.iter() {
        if !server.client_ids.contains(&c.id) {
            return Err(Error::Domain(format!("client {} not registered", c.id)));
        }
    }

    // Work on copies; commit only if the whole round succeeds.
    let mut staged: Vec<ClientState> = clients.to_vec();
    let broadcast = RoundMessage {
        direction: Direction::Broadcast,
        round: server.round,
        client_id: None,
        shared: server.global.clone(),
        domain_summaries: None,
    };
    let broadcast_bytes = broadcast.encode();

    let mut uploads: Vec<RoundMessage> = Vec::with_capacity(staged.len());
    let mut stats = Vec::with_capacity(staged.len());
    for client in staged.iter_mut() {
        let msg = RoundMessage::decode(&broadcast_bytes)?;
        client.params.dense = msg.shared;

        let (loss, accuracy) = train_local(client, config)?;
        stats.push(ClientRoundStats {
            client_id: client.id,
            loss,
            accuracy,
        });

        let upload = RoundMessage {
            direction: Direction::Upload,
            round: server.round,
            client_id: Some(client.id),
            shared: client.params.dense.clone(),
            domain_summaries: Some(client.reduced_summaries()?),
        };
        uploads.push(RoundMessage::decode(&upload.encode())?);
    }

    // Canonical aggregation order: ascending client id.
    uploads.sort_by_key(|m| m.client_id);
    let shared: Vec<DenseLayer> = uploads.iter().map(|m| m.shared.clone()).collect();
    let aggregated = fedavg(&shared)?;

    // Commit: exchange domain summaries for the next round.
    for client in staged.iter_mut() {
        for upload in &uploads {
            let peer = upload.client_id.expect("uploads carry a client id");
            if peer != client.id {
                if let Some(s) = &upload.domain_summaries {
                    client.peer_summaries.insert(peer, s.clone());
                }
            }
        }
    }
    clients.clone_from_slice(&staged);
    server.global = aggregated;
    server.round += 1;

    Ok(RoundReport {
        round: server.round,
        clients: stats,
    })
}

/// `local_epochs` full-batch steps on the client's own data, with the
/// domain loss evaluated against cached peer summaries. Returns the
/// last epoch-end loss and accuracy (evaluated without stepping when
/// `local_epochs` is zero). The λ table is indexed by client id.
fn train_local(client: &mut ClientState, config: &FedConfig) -> Result<(f64, f64)> {
    let peers: Vec<(u32, &DomainSummaries)> = client
        .peer_summaries
        .iter()
        .map(|(&id, s)| (id, s))
        .collect();
    let lambdas: Vec<Vec<f64>> = peers
        .iter()
        .map(|(peer_id, _)| {
            let (i, j) = (
                client.id.min(*peer_id) as usize,
                client.id.max(*peer_id) as usize,
            );
            (0..client.n_classes)
                .map(|y| config.weights.get(i, j, y))
                .collect()
        })
        .collect();
    let terms: Vec<DomainTerm<'_>> = peers
        .iter()
        .zip(&lambdas)
        .map(|((_, summaries), lambda)| DomainTerm {
            peer: summaries.as_slice(),
            lambda: lambda.as_slice(),
            sigma: config.sigma,
        })
        .collect();

    if config.local_epochs == 0 {
        let stats = epoch_stats(&client.params, &client.data, client.n_classes, &terms)?;
        return Ok((stats.loss, stats.accuracy));
    }

    let mut last = (f64::NAN, f64::NAN);
    for _ in 0..config.local_epochs {
        let stats = epoch_stats(&client.params, &client.data, client.n_classes, &terms)?;
        if !stats.loss.is_finite() {
            return Err(Error::Diverged {
                epoch: client.epochs_trained,
            });
        }
        let lr = lr_at(&client.schedule, client.epochs_trained);
        sgd_step(&mut client.params, &stats.grads, lr, client.stiefel)?;
        client.epochs_trained += 1;
        last = (stats.loss, stats.accuracy);
    }
    Ok(last)
}

/// Round loop: repeats [`run_round`] until every client's epoch-end
/// loss is below the stop threshold or the round cap is reached, then
/// broadcasts the final global weights to all clients.
pub fn run_federated_training(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &FedConfig,
) -> Result<Vec<RoundReport>> {
    let mut history = Vec::new();
    for _ in 0..config.max_rounds {
        let report = run_round(server, clients, config)?;
        let all_below = report.clients.iter().all(|c| c.loss < config.stop_loss);
        history.push(report);
        if all_below {
            break;
        }
    }
    // Final broadcast so every client holds the aggregated classifier.
    let msg = RoundMessage {
        direction: Direction::Broadcast,
        round: server.round,
        client_id: None,
        shared: server.global.clone(),
        domain_summaries: None,
    };
    let bytes = msg.encode();
    for client in clients.iter_mut() {
        client.params.dense = RoundMessage::decode(&bytes)?.shared;
    }
    Ok(history)
}
