use std::io::{BufReader, BufWriter, ErrorKind};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use super::{wire, EvalInput, Evaluator};
use crate::error::{Error, Result};
use crate::se3::Pose;

/// Forwards batches to an external process over a TCP stream.
///
/// Only positions and labels cross the wire. One request is in flight at a
/// time; the connection is reused across frames.
pub struct RemoteEvaluator {
    conn: Mutex<TcpStream>,
    name: String,
}

impl RemoteEvaluator {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Option<Duration>) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Evaluation(format!("connect: {e}")))?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(timeout)?;
        stream.set_write_timeout(timeout)?;
        let name = format!("remote:{}", stream.peer_addr()?);
        Ok(Self {
            conn: Mutex::new(stream),
            name,
        })
    }
}

impl Evaluator for RemoteEvaluator {
    fn quality(&self, batch: &[EvalInput]) -> Result<Vec<f64>> {
        let stream = self.conn.lock().map_err(|_| Error::Evaluation("connection poisoned".into()))?;
        let clouds: Vec<_> = batch.iter().map(|b| &b.cloud).collect();
        let transport = |e: std::io::Error| Error::Evaluation(format!("transport: {e}"));
        wire::write_request(&mut BufWriter::new(&*stream), &clouds).map_err(transport)?;
        let scores = wire::read_response(&mut BufReader::new(&*stream)).map_err(transport)?;
        if scores.len() != batch.len() {
            return Err(Error::Evaluation(format!(
                "remote returned {} scores for {} clouds",
                scores.len(),
                batch.len()
            )));
        }
        if scores.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Evaluation("remote quality outside [0, 1]".into()));
        }
        Ok(scores)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Serves wire requests on `stream` with a local evaluator until the peer
/// disconnects. Candidate poses are not transmitted, so `grasp` is identity.
pub fn serve_connection(stream: TcpStream, evaluator: &dyn Evaluator) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let clouds = match wire::read_request(&mut reader) {
            Ok(c) => c,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let batch: Vec<EvalInput> = clouds
            .into_iter()
            .map(|cloud| EvalInput {
                cloud,
                grasp: Pose::identity(),
            })
            .collect();
        let scores = evaluator.quality(&batch)?;
        wire::write_response(&mut writer, &scores)?;
    }
}
